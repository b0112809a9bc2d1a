"""Command-line surface for the sampler.

Subcommands: `diagnose` (model constants, duality window, condition number,
advisory hyperparameters), `sample` (posterior draws to CSV plus a metrics
JSON), `score-check` (Monte-Carlo score vs the exact oracle on a point
grid), `compare` (one JSON with W2, mode weights, and runtime for this
sampler, Langevin and guided-diffusion baselines, and fresh oracle draws),
and `ablate-t` (terminal-time sweep to a curve CSV).

Configs are YAML with three sections (problem, sampler, run) plus an
optional baselines section; unknown keys are rejected at every level and
omitted keys take the documented defaults, so parse -> dump -> parse is the
identity on the schema. Exit codes: 0 success, 1 runtime failure, 2 config
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .models import (
    IsotropicGaussianMixture,
    LinearGaussianLikelihood,
    NonlinearGaussianLikelihood,
    ProblemSpec,
    condition_number,
    gmm_constants,
    lsi_bound,
)
from .oracle import (
    dps_sample_batch,
    exact_posterior,
    exact_score,
    exact_timet_posterior,
    sample_exact,
    ula_baseline,
    w2_1d,
    w2_sliced,
)
from .rgo import RgoConfig, estimate_posterior_score
from .reverse import ReverseConfig, advisor, sample_batch
from .schedule import OUSchedule, duality_window, suggest_terminal_time
from .warmstart import WarmStartConfig

__all__ = ["ConfigError", "load_config", "build_problem", "build_sampler", "main"]

_CSV_FMT = "%.17g"

_SAMPLER_DEFAULTS = {
    "T": "mid",
    "T0": 0.05,
    "steps_per_unit_time": 1200,
    "truncation_radius": "auto",
    "final_denoise_sigma": 0.0,
    "n_out": 400,
    "snr_out": 0.16,
    "chain_reuse": True,
    "n_in_warm": 50,
    "n_in_reverse": 20,
    "snr_in": 0.075,
    "m_chains": 20,
    "burn_in_fraction": 0.5,
    "step_clamp": [1e-10, 0.02],
}
_RUN_DEFAULTS = {
    "n_samples": 2000,
    "master_seed": 0,
    "workers": 1,
    "out_dir": "results",
}
_ULA_DEFAULTS = {"steps": 5000, "step_size": 0.01}
_DPS_DEFAULTS = {"zeta": 1.0}


class ConfigError(Exception):
    """Invalid or malformed run configuration."""


def _check_keys(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def _require(section, key, where):
    if key not in section:
        raise ConfigError(f"{where}.{key} is required")
    return section[key]


def _with_defaults(section, defaults, where):
    _check_keys(section, defaults, where)
    out = dict(defaults)
    out.update(section)
    return out


def load_config(path):
    """Parse and validate a config file; returns the canonical dict with all
    defaults filled in."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {path}: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, ("problem", "sampler", "run", "baselines"), "config")

    problem = _require(raw, "problem", "config")
    _check_keys(problem, ("prior", "likelihood"), "problem")
    prior = _require(problem, "prior", "problem")
    _check_keys(prior, ("type", "weights", "means", "sigmas"), "problem.prior")
    if prior.get("type") != "gmm":
        raise ConfigError("problem.prior.type must be 'gmm'")
    for key in ("weights", "means", "sigmas"):
        _require(prior, key, "problem.prior")

    lik = _require(problem, "likelihood", "problem")
    kind = lik.get("type")
    if kind == "linear_gaussian":
        _check_keys(lik, ("type", "A", "y", "noise_std"), "problem.likelihood")
        for key in ("A", "y", "noise_std"):
            _require(lik, key, "problem.likelihood")
    elif kind == "nonlinear_builtin":
        _check_keys(
            lik, ("type", "operator", "y", "noise_std"), "problem.likelihood"
        )
        for key in ("operator", "y", "noise_std"):
            _require(lik, key, "problem.likelihood")
        if lik["operator"] not in ("tanh",):
            raise ConfigError(
                f"unknown operator {lik['operator']!r}; built-ins: tanh"
            )
    else:
        raise ConfigError(
            "problem.likelihood.type must be 'linear_gaussian' or "
            "'nonlinear_builtin'"
        )

    cfg = {
        "problem": {"prior": dict(prior), "likelihood": dict(lik)},
        "sampler": _with_defaults(raw.get("sampler", {}), _SAMPLER_DEFAULTS,
                                  "sampler"),
        "run": _with_defaults(raw.get("run", {}), _RUN_DEFAULTS, "run"),
    }
    baselines = raw.get("baselines", {})
    _check_keys(baselines, ("ula", "dps"), "baselines")
    cfg["baselines"] = {
        "ula": _with_defaults(baselines.get("ula", {}), _ULA_DEFAULTS,
                              "baselines.ula"),
        "dps": _with_defaults(baselines.get("dps", {}), _DPS_DEFAULTS,
                              "baselines.dps"),
    }
    return cfg


def config_hash(cfg):
    """Stable digest of the result-relevant config content. Output location
    and worker count never change results, so they stay out of the hash."""
    doc = {k: v for k, v in cfg.items() if k != "run"}
    doc["run"] = {k: v for k, v in cfg["run"].items()
                  if k not in ("out_dir", "workers")}
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True).encode()
    ).hexdigest()[:16]


def build_problem(cfg):
    """Construct the ProblemSpec described by the problem section."""
    spec = cfg["problem"]
    prior_cfg = spec["prior"]
    try:
        sigmas = np.asarray(prior_cfg["sigmas"], dtype=float)
        prior = IsotropicGaussianMixture(
            prior_cfg["weights"], prior_cfg["means"], sigmas**2
        )
        lik_cfg = spec["likelihood"]
        if lik_cfg["type"] == "linear_gaussian":
            lik = LinearGaussianLikelihood(
                np.asarray(lik_cfg["A"], dtype=float),
                np.asarray(lik_cfg["y"], dtype=float),
                lik_cfg["noise_std"],
            )
        else:
            y = np.asarray(lik_cfg["y"], dtype=float)
            lik = NonlinearGaussianLikelihood(
                f=np.tanh,
                jt_vec=lambda x, v: (1.0 - np.tanh(x) ** 2) * v,
                y=y,
                noise_std=lik_cfg["noise_std"],
                d=y.shape[0],
            )
        return ProblemSpec(prior=prior, likelihood=lik)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"problem section: {e}")


def build_sampler(cfg, problem, t_override=None):
    """Construct the ReverseConfig described by the sampler section.

    T: 'mid' resolves to the threshold-midpoint suggestion for the prior;
    t_override (used by the ablation sweep) replaces T and clips T0 to T/2
    so small terminal times stay valid.
    """
    s = cfg["sampler"]
    t_end = t_override if t_override is not None else s["T"]
    if t_end == "mid":
        consts = gmm_constants(problem.prior)
        t_end = suggest_terminal_time(consts.alpha, consts.v_sg2)
    try:
        t_end = float(t_end)
        t_stop = min(float(s["T0"]), t_end / 2.0)
        radius = s["truncation_radius"]
        if radius != "auto":
            radius = float(radius)
        clamp = tuple(float(c) for c in s["step_clamp"])

        def inner(n_in):
            return RgoConfig(
                n_in=n_in,
                snr_in=s["snr_in"],
                m_chains=s["m_chains"],
                burn_in_fraction=s["burn_in_fraction"],
                step_clamp=clamp,
            )

        return ReverseConfig(
            T=t_end,
            T0=t_stop,
            steps_per_unit_time=s["steps_per_unit_time"],
            truncation_radius=radius,
            final_denoise_sigma=s["final_denoise_sigma"],
            inner=inner(s["n_in_reverse"]),
            warm=WarmStartConfig(
                n_out=s["n_out"],
                snr_out=s["snr_out"],
                chain_reuse=s["chain_reuse"],
                inner=inner(s["n_in_warm"]),
            ),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"sampler section: {e}")


@dataclass
class RunContext:
    cfg: dict
    problem: ProblemSpec
    schedule: OUSchedule
    run: dict
    hash: str

    @property
    def out_dir(self):
        out = Path(self.run["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return out


def _load_context(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["run"]["master_seed"] = args.seed
    if args.workers is not None:
        cfg["run"]["workers"] = args.workers
    if args.out is not None:
        cfg["run"]["out_dir"] = args.out
    run = cfg["run"]
    if not (isinstance(run["n_samples"], int) and run["n_samples"] >= 1):
        raise ConfigError("run.n_samples must be a positive integer")
    if not (isinstance(run["workers"], int) and run["workers"] >= 1):
        raise ConfigError("run.workers must be a positive integer")
    problem = build_problem(cfg)
    return RunContext(
        cfg=cfg,
        problem=problem,
        schedule=OUSchedule(),
        run=run,
        hash=config_hash(cfg),
    )


def _require_oracle(ctx, command):
    if ctx.cfg["problem"]["likelihood"]["type"] != "linear_gaussian":
        raise ConfigError(
            f"{command} needs the exact oracle, which only covers "
            "linear_gaussian likelihoods"
        )
    return exact_posterior(ctx.problem.prior, ctx.problem.likelihood)


def _mode_weights(mixture, samples):
    """Fraction of samples whose largest posterior responsibility belongs
    to each mixture component."""
    log_comp, _ = mixture._log_components(np.asarray(samples, dtype=float))
    idx = np.argmax(log_comp, axis=-1)
    return [float(np.mean(idx == k)) for k in range(mixture.K)]


def _w2(samples, ref):
    if samples.shape[1] == 1:
        return float(w2_1d(samples[:, 0], ref[:, 0]))
    return float(w2_sliced(samples, ref))


def _write_csv(path, header, rows):
    np.savetxt(path, rows, fmt=_CSV_FMT, delimiter=",", header=header,
               comments="")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(path, doc):
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True)
                          + "\n")


def cmd_diagnose(ctx, args):
    prior = ctx.problem.prior
    consts = gmm_constants(prior)
    window = duality_window(consts.alpha, consts.v_sg2)
    rcfg = build_sampler(ctx.cfg, ctx.problem)
    kappa = condition_number(ctx.problem)
    report = {
        "alpha": consts.alpha,
        "v_sg2": consts.v_sg2,
        "c_sg": consts.c_sg,
        "t_lower": window.lower,
        "t_upper": window.upper,
        "window_nonempty": window.nonempty,
        "T": rcfg.T,
        "T_in_window": window.contains(rcfg.T),
        "kappa": kappa,
    }
    try:
        report["lsi_bound"] = lsi_bound(
            ctx.schedule, rcfg.T, kappa, consts.c_sg, consts.v_sg2
        )
    except ValueError as e:
        report["lsi_bound"] = f"unavailable: {e}"
    try:
        adv = advisor(ctx.schedule, rcfg.T, rcfg.T0, consts.alpha, kappa)
        report["advisor"] = {"s": adv.s, "m": adv.m, "eps_prior": adv.eps_prior}
    except ValueError as e:
        report["advisor"] = f"unavailable: {e}"
    if not window.contains(rcfg.T):
        report["warning"] = (
            f"terminal time T={rcfg.T:.6g} lies outside the duality window"
            + ("" if window.nonempty else " (window is empty)")
        )
    for key, value in report.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                print(f"{key}.{sub}: {v}")
        else:
            print(f"{key}: {value}")
    _write_json(ctx.out_dir / "diagnostics.json", report)
    return 0


def cmd_sample(ctx, args):
    rcfg = build_sampler(ctx.cfg, ctx.problem)
    out = sample_batch(
        ctx.problem,
        ctx.schedule,
        rcfg,
        ctx.run["n_samples"],
        master_seed=ctx.run["master_seed"],
        workers=ctx.run["workers"],
    )
    if out.failures:
        stage, step, idx = out.failures[0]
        print(
            f"{len(out.failures)} trajectories diverged (first: {stage} "
            f"step {step}, trajectory {idx}); no results written",
            file=sys.stderr,
        )
        return 1
    d = out.samples.shape[1]
    header = ",".join(f"x{j}" for j in range(d))
    _write_csv(ctx.out_dir / "samples.csv", header, out.samples)
    _write_json(ctx.out_dir / "metrics.json", {
        "seed": ctx.run["master_seed"],
        "runtime_s": out.wall_time,
        "config_hash": ctx.hash,
        "n_samples": int(out.samples.shape[0]),
        "d": int(d),
    })
    print(f"wrote {out.samples.shape[0]} samples to {ctx.out_dir/'samples.csv'}")
    return 0


def cmd_score_check(ctx, args):
    post = _require_oracle(ctx, "score-check")
    if ctx.problem.d != 1:
        raise ConfigError("score-check's point grid is 1D; d must be 1")
    t = args.t
    if not t > 0:
        raise ConfigError("--t must be positive")
    points = [float(p) for p in args.points.split(",") if p.strip()]
    if not points:
        raise ConfigError("--points must name at least one point")
    mix = exact_timet_posterior(post, ctx.schedule, t)
    inner = RgoConfig(n_in=args.n_in, m_chains=args.m_chains)
    rng = np.random.default_rng(
        np.random.SeedSequence([ctx.run["master_seed"], 4])
    )
    rows = []
    for xv in points:
        x = np.array([xv])
        exact = float(exact_score(mix, x)[0])
        est = float(
            estimate_posterior_score(ctx.problem, ctx.schedule, t, x, inner,
                                     rng=rng)[0]
        )
        rel = abs(est - exact) / abs(exact) if exact != 0.0 else math.nan
        rows.append((xv, exact, est, rel))
    table = np.array(rows)
    _write_csv(ctx.out_dir / "score_check.csv", "x,exact,estimated,rel_err",
               table)
    # Aggregate relative error: pointwise ratios are undefined at score
    # zeros, so the summary normalizes total error by total magnitude.
    mean_rel = float(np.mean(np.abs(table[:, 2] - table[:, 1]))
                     / np.mean(np.abs(table[:, 1])))
    finite = table[table[:, 1] != 0.0]
    max_rel = float(np.max(finite[:, 3])) if len(finite) else math.nan
    for xv, exact, est, rel in rows:
        print(f"x={xv:+.6g}  exact={exact:+.6g}  estimated={est:+.6g}  "
              f"rel_err={rel:.6g}")
    print(f"mean_rel_err: {mean_rel:.6g}")
    print(f"max_rel_err: {max_rel:.6g}")
    return 0


def _compare_entry(samples, ref, post, runtime):
    return {
        "w2": _w2(samples, ref),
        "mode_weights": _mode_weights(post, samples),
        "runtime_s": runtime,
        "n": int(samples.shape[0]),
    }


def cmd_compare(ctx, args):
    post = _require_oracle(ctx, "compare")
    rcfg = build_sampler(ctx.cfg, ctx.problem)
    n = ctx.run["n_samples"]
    seed = ctx.run["master_seed"]
    ref = sample_exact(
        post, n, np.random.default_rng(np.random.SeedSequence([seed, 2]))
    ).samples
    methods = {}

    def attempt(name, draw):
        try:
            start = time.perf_counter()
            out = draw()
            methods[name] = _compare_entry(
                out.samples, ref, post, time.perf_counter() - start
            )
        except Exception as e:
            methods[name] = {"error": str(e)}

    attempt("pdps", lambda: sample_batch(
        ctx.problem, ctx.schedule, rcfg, n, master_seed=seed,
        workers=ctx.run["workers"],
    ))
    ula_cfg = ctx.cfg["baselines"]["ula"]
    attempt("ula", lambda: ula_baseline(
        ctx.problem, ula_cfg["steps"], ula_cfg["step_size"], n,
        np.random.default_rng(np.random.SeedSequence([seed, 1])),
    ))
    attempt("dps", lambda: dps_sample_batch(
        ctx.problem, ctx.schedule, rcfg, n, master_seed=seed,
        zeta=ctx.cfg["baselines"]["dps"]["zeta"],
    ))
    attempt("oracle", lambda: sample_exact(
        post, n, np.random.default_rng(np.random.SeedSequence([seed, 3]))
    ))

    doc = {
        "seed": seed,
        "n_samples": n,
        "config_hash": ctx.hash,
        "T": rcfg.T,
        "methods": methods,
    }
    _write_json(ctx.out_dir / "compare.json", doc)
    for name, entry in methods.items():
        if "error" in entry:
            print(f"{name}: failed: {entry['error']}")
        else:
            print(f"{name}: w2={entry['w2']:.6g}  "
                  f"mode_weights={entry['mode_weights']}  "
                  f"runtime_s={entry['runtime_s']:.3g}")
    return 0 if "error" not in methods["pdps"] else 1


def cmd_ablate_t(ctx, args):
    post = _require_oracle(ctx, "ablate-t")
    grid = [float(v) for v in args.t_grid.split(",") if v.strip()]
    if not grid:
        raise ConfigError("--t-grid must name at least one terminal time")
    n = ctx.run["n_samples"]
    seed = ctx.run["master_seed"]
    ref = sample_exact(
        post, n, np.random.default_rng(np.random.SeedSequence([seed, 2]))
    ).samples
    rows = []
    for t_end in grid:
        try:
            rcfg = build_sampler(ctx.cfg, ctx.problem, t_override=t_end)
            start = time.perf_counter()
            out = sample_batch(
                ctx.problem, ctx.schedule, rcfg, n, master_seed=seed,
                workers=ctx.run["workers"],
            )
            rows.append((t_end, _w2(out.samples, ref),
                         time.perf_counter() - start))
        except Exception as e:
            print(f"T={t_end:.6g} failed: {e}", file=sys.stderr)
            rows.append((t_end, math.nan, math.nan))
    _write_csv(ctx.out_dir / "ablate_t.csv", "T,w2,runtime_s", np.array(rows))
    for t_end, w2, runtime in rows:
        print(f"T={t_end:.6g}  w2={w2:.6g}  runtime_s={runtime:.3g}")
    return 0


_COMMANDS = {
    "diagnose": cmd_diagnose,
    "sample": cmd_sample,
    "score-check": cmd_score_check,
    "compare": cmd_compare,
    "ablate-t": cmd_ablate_t,
}


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="pdps",
        description="Posterior sampling via early-stopped reverse diffusion "
        "with Monte-Carlo scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--seed", type=int, default=None,
                       help="override run.master_seed")
        p.add_argument("--workers", type=int, default=None,
                       help="override run.workers")
        p.add_argument("--out", default=None, help="override run.out_dir")

    common(sub.add_parser("diagnose", help="print model constants and "
                          "window/advisory diagnostics"))
    common(sub.add_parser("sample", help="draw posterior samples to CSV"))
    p = sub.add_parser("score-check", help="Monte-Carlo score vs exact oracle")
    common(p)
    p.add_argument("--t", type=float, default=0.2, help="diffusion time")
    p.add_argument("--points", default="-1,0,1",
                   help="comma-separated 1D evaluation points")
    p.add_argument("--n-in", type=int, default=2000,
                   help="inner chain steps per point")
    p.add_argument("--m-chains", type=int, default=200,
                   help="parallel inner chains per point")
    common(sub.add_parser("compare", help="compare against baselines and "
                          "oracle draws"))
    p = sub.add_parser("ablate-t", help="terminal-time sweep")
    common(p)
    p.add_argument("--t-grid", required=True,
                   help="comma-separated terminal times")
    return parser.parse_args(argv)


def main(argv=None):
    args = _parse_args(argv)
    try:
        ctx = _load_context(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](ctx, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

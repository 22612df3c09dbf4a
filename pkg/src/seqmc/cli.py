"""Command-line driver: ``seqmc run|verify|bounds|dim-sweep``.

Configuration is TOML with dotted keys, for example::

    seed = 7
    model.kind = "tempering"          # or "fixture_a", "product"
    model.H = [0, 1, 2, 3]
    model.betas = [0, 0.5, 1.0]
    model.steps = [8, 8]
    run.N = 64
    run.R = 1000

``SEQMC_SEED`` overrides the configured seed and ``--seed`` overrides both.
Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import diagnostics, stability
from .errors import ConfigError, SeqMCError
from .measures import integrate
from .particles import simulate
from .tempering import (
    SWEEP_COLUMNS,
    ProductSpec,
    TemperingSpec,
    build_product,
    build_tempered,
    dimension_sweep,
    fixture_a,
    product_states,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

ALLOWED = {
    "seed": None,
    "model": {"kind", "H", "betas", "steps", "d"},
    "run": {"N", "R", "f"},
    "bounds": {"p", "tau", "theta", "a_star"},
    "illustration": {"gamma", "tau", "s", "n"},
    "stability": {"trials", "alpha", "alpha_scale", "theta"},
    "sweep": {"dims", "N", "R"},
}


@dataclass
class ExperimentConfig:
    kind: str = "fixture_a"
    H: Optional[List[float]] = None
    betas: Optional[List[float]] = None
    steps: Optional[List[int]] = None
    d: int = 1
    N: int = 64
    R: int = 1000
    f: Optional[List[float]] = None
    seed: int = 0
    p: int = 4
    tau: Optional[float] = None
    theta: Optional[float] = None
    a_star: Optional[List[float]] = None
    illustration: dict = field(default_factory=lambda: {"gamma": 2.0, "tau": 0.8, "s": 2, "n": 1})
    trials: int = 10_000
    alpha: Optional[float] = None
    alpha_scale: float = 1.0
    dims: List[int] = field(default_factory=lambda: [1, 2])
    sweep_N: int = 32
    sweep_R: int = 1000

    def base_spec(self) -> TemperingSpec:
        if self.kind == "fixture_a":
            return fixture_a()
        if self.H is None or self.betas is None or self.steps is None:
            raise ConfigError("model.H, model.betas and model.steps are required")
        return TemperingSpec(H=np.asarray(self.H, float), betas=self.betas, mcmc_steps=self.steps)

    def build(self):
        base = self.base_spec()
        if self.kind == "product":
            return build_product(ProductSpec(base, self.d))
        return build_tempered(base)

    def test_function(self, seq) -> np.ndarray:
        if self.f is not None:
            v = np.asarray(self.f, dtype=np.float64)
            if v.shape != (seq.m,):
                raise ConfigError(f"run.f has {v.size} entries, the model has {seq.m} states")
            return v
        h = self.base_spec().H.values
        if self.kind == "product":
            return h[product_states(h.size, self.d)[:, 0]]
        return h.copy()


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _int(table, key, name, lo=None):
    v = table[key]
    _require(isinstance(v, int) and not isinstance(v, bool), f"{name} must be an integer, got {v!r}")
    if lo is not None:
        _require(v >= lo, f"{name} must be >= {lo}, got {v}")
    return v


def _floats(table, key, name):
    v = table[key]
    _require(isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                         for x in v), f"{name} must be a list of numbers")
    return [float(x) for x in v]


def load_config(path: Path) -> ExperimentConfig:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = ExperimentConfig()
    for section, value in raw.items():
        _require(section in ALLOWED, f"{path}: unknown key '{section}'")
        if ALLOWED[section] is None:
            continue
        _require(isinstance(value, dict), f"{path}: '{section}' must be a table")
        for key in value:
            _require(key in ALLOWED[section], f"{path}: unknown key '{section}.{key}'")
    if "seed" in raw:
        cfg.seed = _int(raw, "seed", "seed", lo=0)
    m = raw.get("model", {})
    if "kind" in m:
        _require(m["kind"] in ("fixture_a", "tempering", "product"),
                 f"model.kind must be fixture_a, tempering or product, got {m['kind']!r}")
        cfg.kind = m["kind"]
    if "H" in m:
        cfg.H = _floats(m, "H", "model.H")
    if "betas" in m:
        cfg.betas = _floats(m, "betas", "model.betas")
    if "steps" in m:
        cfg.steps = [int(x) for x in _floats(m, "steps", "model.steps")]
    if "d" in m:
        cfg.d = _int(m, "d", "model.d", lo=1)
    r = raw.get("run", {})
    if "N" in r:
        cfg.N = _int(r, "N", "run.N", lo=1)
    if "R" in r:
        cfg.R = _int(r, "R", "run.R", lo=1)
    if "f" in r:
        cfg.f = _floats(r, "f", "run.f")
    b = raw.get("bounds", {})
    if "p" in b:
        cfg.p = _int(b, "p", "bounds.p", lo=4)
    if "tau" in b:
        cfg.tau = float(b["tau"])
    if "theta" in b:
        cfg.theta = float(b["theta"])
    if "a_star" in b:
        cfg.a_star = _floats(b, "a_star", "bounds.a_star")
    ill = raw.get("illustration", {})
    for key in ("gamma", "tau", "s", "n"):
        if key in ill:
            _require(isinstance(ill[key], (int, float)) and not isinstance(ill[key], bool),
                     f"illustration.{key} must be a number")
            cfg.illustration[key] = ill[key]
    st = raw.get("stability", {})
    if "trials" in st:
        cfg.trials = _int(st, "trials", "stability.trials", lo=1)
    if "alpha" in st:
        cfg.alpha = float(st["alpha"])
    if "alpha_scale" in st:
        cfg.alpha_scale = float(st["alpha_scale"])
    if "theta" in st:
        cfg.theta = float(st["theta"])
    sw = raw.get("sweep", {})
    if "dims" in sw:
        cfg.dims = [int(x) for x in _floats(sw, "dims", "sweep.dims")]
    if "N" in sw:
        cfg.sweep_N = _int(sw, "N", "sweep.N", lo=1)
    if "R" in sw:
        cfg.sweep_R = _int(sw, "R", "sweep.R", lo=2)
    return cfg


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return None if not math.isfinite(x) else float(x)
    return x


def write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_run(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    seq = cfg.build()
    f = cfg.test_function(seq)
    ens = simulate(seq, cfg.N, cfg.R, cfg.seed, threads=threads)
    n = seq.n
    eta, nu, phi = ens.eta(n, f), ens.nu(n, f), ens.phi[:, n]
    rows = []
    for r in range(ens.R):
        ok = bool(ens.ok[r])
        rows.append(["rep", r, eta[r] if ok else math.nan, nu[r] if ok else math.nan,
                     phi[r], ok])
    good = ens.ok
    stats = [diagnostics.mean_se(x[good]) for x in (eta, nu, phi)]
    rows.append(["mean", "", *(s[0] for s in stats), int(good.sum())])
    rows.append(["se", "", *(s[1] for s in stats), int((~good).sum())])
    exact = integrate(seq.mus[n], f)
    rows.append(["exact", "", exact, exact, 1.0, ""])
    write_csv(out / "estimates.csv", ["kind", "replication", "eta", "nu", "phi", "ok"], rows)
    if (~good).any():
        print(f"{int((~good).sum())} of {ens.R} replications aborted", file=sys.stderr)
    print(f"wrote {out / 'estimates.csv'} ({ens.R} replications)")
    return EXIT_OK


DESCRIPTIONS = {
    "alpha_beta_one_step": "one-step L2 mixing bound for the hatted propagator (alpha, beta)",
    "hatted_l2_iterated": "iterated L2 bound with alpha^(k-j) decay",
    "hatted_l2_uniform": "uniform L2 bound 1/sqrt(1-alpha)",
    "hatted_lp": "L_p bound with delta(p)",
    "lp_lq_propagator": "L_p'-L_q bound for q_{j,k} with ctilde",
    "centered_decay": "exponential decay for centered functions",
    "kernel_l2_contraction": "L2 contraction exp(-2 b* t) of the kernels",
    "kernel_hyperbound": "L_p'-L_q hyperbound theta of the kernels",
    "log_sobolev_hyperbound": "hypercontractivity with q(p, t) = 1 + (p-1) exp(2 a* t)",
}


def _constants(cfg: ExperimentConfig, seq) -> stability.StabilityConstants:
    consts = stability.chain_constants(seq, p=cfg.p, tau=cfg.tau, alpha=cfg.alpha,
                                       theta=cfg.theta, a_star=cfg.a_star)
    if cfg.alpha_scale != 1.0:
        consts = consts.with_alpha(consts.alpha * cfg.alpha_scale)
    return consts


def cmd_verify(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    if cfg.R < diagnostics.MIN_REPLICATIONS:
        print(f"error: verify needs run.R >= {diagnostics.MIN_REPLICATIONS}, got {cfg.R}",
              file=sys.stderr)
        return EXIT_USAGE
    seq = cfg.build()
    f = cfg.test_function(seq)
    ens = simulate(seq, cfg.N, cfg.R, cfg.seed, threads=threads)
    report = diagnostics.variance_report_from(ens, seq, f)
    checks: List[diagnostics.Check] = list(report.checks())
    if report.abort_fraction > diagnostics.MAX_ABORT_FRACTION:
        checks.append(diagnostics.Check("abort_fraction", report.abort_fraction, 0.0,
                                        diagnostics.MAX_ABORT_FRACTION, False))
    eb = diagnostics.eta_error_bounds(report, f)
    checks.append(diagnostics.Check("eta_mse <= bound", float(eb.mse[0]), 0.0,
                                    float(eb.mse_bound[0]), bool(eb.mse[0] <= eb.mse_bound[0])))
    checks.append(diagnostics.Check("eta_mae <= bound", float(eb.mae[0]), 0.0,
                                    float(eb.mae_bound[0]), bool(eb.mae[0] <= eb.mae_bound[0])))
    checks += diagnostics.unbiasedness_checks(ens, seq, diagnostics.function_dictionary(seq))
    checks += diagnostics.martingale_checks(ens, seq, f)

    consts = _constants(cfg, seq)
    for res in stability.falsify_all(seq, consts, cfg.trials, cfg.seed):
        checks.append(diagnostics.Check(res.kind, res.ratio, 0.0, 1.0, not res.falsified))

    write_json(out / "variance_report.json", report.to_dict())
    write_csv(out / "verify_report.csv", ["quantity", "estimate", "se", "exact", "pass"],
              [c.row() for c in checks])
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.quantity}")
    for c in failed:
        label = DESCRIPTIONS.get(c.quantity, c.quantity)
        print(f"verification failed: {c.quantity} ({label}): estimate={c.estimate:.6g}, "
              f"reference={c.exact:.6g}, margin={c.estimate - c.exact:+.3g}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_bounds(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    seq = cfg.build()
    f = cfg.test_function(seq)
    consts = _constants(cfg, seq)
    doc = consts.to_dict()
    err_bound = stability.particle_mse_bound(seq, consts, f, cfg.N)
    doc.update({f"error_{k}": v for k, v in err_bound.to_dict().items()})
    model_bound = None
    doc["t_inequality_failed"] = None  # not evaluated without a feasible tau
    if seq.n >= 1 and consts.feasible["tau_positive"]:
        model_bound = stability.explicit_bound(
            consts.gamma, consts.tau, consts.s, seq.n, cfg.N, a_star=cfg.a_star,
            b_star=consts.b_star, t=consts.steps)
        doc.update({f"model_{k}": v for k, v in model_bound.to_dict().items()})
        doc["t_inequality_failed"] = model_bound.t_inequality_failed
    ill = cfg.illustration
    eb = stability.explicit_bound(float(ill["gamma"]), float(ill["tau"]), int(ill["s"]),
                                  int(ill["n"]))
    doc.update({f"explicit_{k}": v for k, v in eb.to_dict().items()})
    if (eb.gamma, eb.tau, eb.s) == (2.0, 0.8, 2):
        for k, ok in eb.dominated_by_rounded().items():
            doc[f"explicit_{k}_within_rounded"] = ok
    write_json(out / "bounds.json", doc)
    if not consts.all_feasible:
        bad = [k for k, v in consts.feasible.items() if not v]
        print(f"infeasible constants: {', '.join(bad)}", file=sys.stderr)
    print(f"wrote {out / 'bounds.json'}")
    return EXIT_OK


def cmd_dim_sweep(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    rows = dimension_sweep(cfg.base_spec(), cfg.dims, cfg.sweep_N, cfg.sweep_R, cfg.seed,
                           p=cfg.p, threads=threads)
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, [[row[c] for c in SWEEP_COLUMNS] for row in rows])
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} rows)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "bounds": cmd_bounds,
            "dim-sweep": cmd_dim_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqmc", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, type=Path, help="TOML experiment file")
    ap.add_argument("--seed", type=int, default=None, help="64-bit seed (overrides config)")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads for replications (default: all cores)")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        env_seed = os.environ.get("SEQMC_SEED")
        if env_seed is not None:
            try:
                cfg.seed = int(env_seed)
            except ValueError:
                raise ConfigError(f"SEQMC_SEED must be an integer, got {env_seed!r}")
        if args.seed is not None:
            cfg.seed = args.seed
        if not 0 <= cfg.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg.seed}")
        threads = args.threads or os.cpu_count() or 1
        if threads < 1:
            raise ConfigError("--threads must be positive")
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, threads)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SeqMCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

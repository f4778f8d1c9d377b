"""Command-line entry point: ``hdnsm simulate|estimate|bootstrap|mc-study``.

Configuration is a flat ``key = value`` text file (``#`` starts a comment).
Recognized keys are the TuningConfig field names plus::

    input, outcome, treatment, controls, out, taus, flavor, alpha,
    multiplier, B, seed, n, p, copula_decay, reps, truth, truth_mc_size,
    jobs, t_min, t_max

Command-line flags override file values. Every mode writes into ``out``:
curves.csv, alpha.csv, selection.csv and report.json (simulate also writes
data.csv; mc-study also writes mc_report.csv and mc_summary.json).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .bootstrap import MultiplierSpec, bootstrap_curves, modified_percentile_ci
from .data import Dataset, load_csv_dataset, write_csv_dataset
from .dose_response import FLAVORS, Grids, MomentTable, check_grid_interior, fit_stage_one
from .kernels import TuningConfig, penalty_lambda, select_bandwidth
from .simulation import (DgpConfig, OracleTruth, StudyConfig, _replicate_seeds, run_mc_study,
                         simulate_dgp)

MODES = ("simulate", "estimate", "bootstrap", "mc-study")
TOP_NAMES = 5

_TUNING_KEYS = {f.name: f.type for f in fields(TuningConfig)}
_RUN_KEYS = {"input", "outcome", "treatment", "controls", "out", "taus", "flavor", "alpha",
             "multiplier", "B", "seed", "n", "p", "copula_decay", "reps", "truth", "jobs",
             "t_min", "t_max", "truth_mc_size"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str
    output_dir: Path = Path("out")
    input_path: Optional[Path] = None
    outcome: str = "Y"
    treatment: str = "T"
    controls: Optional[list] = None
    tuning: TuningConfig = field(default_factory=TuningConfig)
    multiplier: MultiplierSpec = field(default_factory=MultiplierSpec)
    dgp: DgpConfig = field(default_factory=DgpConfig)
    taus: tuple = (0.25, 0.5, 0.75)
    flavor: str = "post-lasso"
    alpha: float = 0.05
    reps: int = 100
    truth_path: Optional[Path] = None
    jobs: int = 1
    truth_mc_size: int = 1_000_000
    t_range: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode in ("estimate", "bootstrap") and self.input_path is None:
            raise ConfigError(f"mode {self.mode} needs an input file")
        if not self.taus or any(not 0 < t < 1 for t in self.taus):
            raise ConfigError("tau out of range")
        if self.flavor not in FLAVORS:
            raise ConfigError(f"unknown flavor {self.flavor!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TUNING_KEYS and key not in _RUN_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _float_list(s: str) -> tuple:
    try:
        return tuple(float(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad number list {s!r}") from None


def _coerce_tuning(raw: dict) -> TuningConfig:
    kw = {}
    for name in _TUNING_KEYS:
        if name not in raw:
            continue
        v = raw[name]
        default = getattr(TuningConfig(), name)
        try:
            if name == "kernel":
                kw[name] = v
            elif name == "bandwidth_override":
                kw[name] = None if v.lower() in ("", "none") else float(v)
            elif isinstance(default, int):
                kw[name] = int(v)
            else:
                kw[name] = float(v)
        except ValueError:
            raise ConfigError(f"bad value for {name}: {v!r}") from None
    try:
        return TuningConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_run_config(mode: str, raw: dict) -> RunConfig:
    def get(key, conv, default):
        if key not in raw:
            return default
        try:
            return conv(raw[key])
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw[key]!r}") from None

    controls = raw.get("controls", "all-others").strip()
    controls = None if controls in ("", "all-others") else [c.strip() for c in controls.split(",")]
    seed = get("seed", int, 0)
    t_min, t_max = get("t_min", float, None), get("t_max", float, None)
    if (t_min is None) != (t_max is None):
        raise ConfigError("t_min and t_max must be given together")
    try:
        mult = MultiplierSpec(raw.get("multiplier", "exponential"), get("B", int, 200), seed)
        dgp = DgpConfig(get("n", int, 250), get("p", int, 100), get("copula_decay", float, 5.0), seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        mode=mode,
        output_dir=Path(raw.get("out", "out")),
        input_path=Path(raw["input"]) if raw.get("input") else None,
        outcome=raw.get("outcome", "Y"),
        treatment=raw.get("treatment", "T"),
        controls=controls,
        tuning=_coerce_tuning(raw),
        multiplier=mult,
        dgp=dgp,
        taus=_float_list(raw["taus"]) if "taus" in raw else (0.25, 0.5, 0.75),
        flavor=raw.get("flavor", "post-lasso"),
        alpha=get("alpha", float, 0.05),
        reps=get("reps", int, 100),
        truth_path=Path(raw["truth"]) if raw.get("truth") else None,
        jobs=get("jobs", int, 1),
        truth_mc_size=get("truth_mc_size", int, 1_000_000),
        t_range=None if t_min is None else (t_min, t_max),
    )


# ---------------------------------------------------------------- outputs

def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_curves(path: Path, est, band=None) -> None:
    stats = ("mu", "q", "mu_slope", "q_slope")
    header = ["t", "tau", *stats] + [f"{s}_{b}" for s in stats for b in ("lower", "upper")]
    rows = []
    for j, t in enumerate(est.t_grid):
        for i, tau in enumerate(est.taus):
            pt = [est.mu[j], est.q[i, j], est.mu_slope[j], est.q_slope[i, j]]
            ci = []
            for s in stats:
                idx = (j,) if s.startswith("mu") else (i, j)
                ci += [None, None] if band is None else [band.lower[s][idx], band.upper[s][idx]]
            rows.append([_num(t), _num(tau)] + [_num(v) for v in pt + ci])
    _write_rows(path, header, rows)


def write_alpha(path: Path, est) -> None:
    rows = [[_num(t), _num(u), _num(est.alpha_raw[j, k]), _num(est.alpha_rearranged[j, k])]
            for j, t in enumerate(est.t_grid) for k, u in enumerate(est.u_grid)]
    _write_rows(path, ["t", "u", "alpha_raw", "alpha_rearranged"], rows)


def _top_names(fit, names) -> str:
    coef = fit.coefficients[1:]
    order = [j for j in np.argsort(-np.abs(coef), kind="stable") if coef[j] != 0]
    return ";".join(names[j + 1] for j in order[:TOP_NAMES])


def selection_rows(nuisances, names) -> list:
    """Per-t support sizes (controls only, constant excluded) and leading selected names."""
    rows = []
    for ns in nuisances:
        sizes = ns.support_sizes()
        rows.append([_num(ns.t), "ls", "", sizes["ls"], _top_names(ns.ls_fit, names)])
        rows.append([_num(ns.t), "density", "", sizes["density"], _top_names(ns.density_fit, names)])
        for k, u in enumerate(ns.u_grid):
            fit = ns.logistic_fits[float(u)][0]
            rows.append([_num(ns.t), "logistic", _num(u), int(sizes["logistic"][k]),
                         _top_names(fit, names)])
    return rows


def write_selection(path: Path, nuisances, names) -> None:
    _write_rows(path, ["t", "estimator", "u", "support_size", "top_selected"],
                selection_rows(nuisances, names))


def _support_summary(nuisances) -> dict:
    out = {}
    for key in ("ls", "density"):
        v = [ns.support_sizes()[key] for ns in nuisances]
        out[key] = {"median": float(np.median(v)), "max": int(np.max(v))}
    v = np.concatenate([ns.support_sizes()["logistic"] for ns in nuisances])
    out["logistic"] = {"median": float(np.median(v)), "max": int(np.max(v))}
    return out


# ---------------------------------------------------------------- pipeline

def _grids(data: Dataset, cfg: RunConfig) -> Grids:
    lo, hi = cfg.t_range if cfg.t_range else np.quantile(data.t, [0.2, 0.8])
    u_lo, u_hi = np.quantile(data.y, [0.02, 0.98])
    return Grids(np.linspace(lo, hi, cfg.tuning.t_grid_size),
                 np.linspace(u_lo, u_hi, cfg.tuning.u_grid_size), np.asarray(cfg.taus))


def estimate_and_emit(data: Dataset, cfg: RunConfig, out: Path, spec: Optional[MultiplierSpec],
                      meta: dict) -> dict:
    """Stage 1-3 estimate, optional bootstrap, and the four result files."""
    grids = _grids(data, cfg)
    h = select_bandwidth(data.t, grids.taus, cfg.tuning)
    check_grid_interior(data, grids.t_grid, h)
    kernel = cfg.tuning.kernel_spec
    nuisances = fit_stage_one(data, grids, h, cfg.tuning, kernel)
    moments = MomentTable(data, nuisances, grids, h, kernel, cfg.flavor)
    est = moments.curves()
    band = None
    if spec is not None:
        draws = bootstrap_curves(data, nuisances, grids, cfg.tuning, spec, h, cfg.flavor, moments)
        band = modified_percentile_ci(draws, est.statistics(), cfg.alpha)
        meta["bootstrap"] = {"distribution": spec.distribution, "B": spec.B, "seed": spec.seed,
                             "b_effective": draws.b_effective, "alpha": cfg.alpha}
    write_curves(out / "curves.csv", est, band)
    write_alpha(out / "alpha.csv", est)
    write_selection(out / "selection.csv", nuisances, data.basis_names())
    pl = penalty_lambda(data.n, data.p + 1, h, cfg.tuning.ell_n_constant)
    meta.update({
        "n": data.n, "p": data.p, "h": h, "ell_n": pl.ell_n, "lambda": pl.lam,
        "lambda_density": pl.lam_density, "flavor": cfg.flavor, "taus": list(cfg.taus),
        "t_grid": grids.t_grid.tolist(), "u_grid": grids.u_grid.tolist(),
        "tuning": asdict(cfg.tuning), "support": _support_summary(nuisances),
        "saturated_quantiles": int(np.sum(est.saturated)),
    })
    return meta


def run(cfg: RunConfig) -> dict:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    meta = {"mode": cfg.mode, "seed": cfg.multiplier.seed}
    if cfg.mode == "simulate":
        data = simulate_dgp(cfg.dgp)
        write_csv_dataset(data, out / "data.csv")
        meta["dgp"] = asdict(cfg.dgp)
        estimate_and_emit(data, cfg, out, None, meta)
    elif cfg.mode in ("estimate", "bootstrap"):
        data = load_csv_dataset(cfg.input_path, cfg.outcome, cfg.treatment, cfg.controls)
        meta["input"] = str(cfg.input_path)
        spec = cfg.multiplier if cfg.mode == "bootstrap" else None
        estimate_and_emit(data, cfg, out, spec, meta)
    else:
        study = StudyConfig(dgp=cfg.dgp, tuning=cfg.tuning, R=cfg.reps, B=cfg.multiplier.B,
                            taus=tuple(cfg.taus), alpha=cfg.alpha,
                            multiplier=cfg.multiplier.distribution, flavor=cfg.flavor,
                            seed=cfg.multiplier.seed, truth_mc_size=cfg.truth_mc_size)
        if cfg.t_range:
            study.t_grid = tuple(np.linspace(*cfg.t_range, cfg.tuning.t_grid_size))
        truth = OracleTruth.load(cfg.truth_path) if cfg.truth_path else None
        report = run_mc_study(study, truth, n_jobs=cfg.jobs)
        report.write_csv(out / "mc_report.csv")
        report.write_json(out / "mc_summary.json")
        # the four result files describe replicate 0 of the study
        data_seed, boot_seed = _replicate_seeds(study.seed, 0)
        dgp0 = DgpConfig(cfg.dgp.n, cfg.dgp.p, cfg.dgp.copula_decay, data_seed)
        cfg0 = RunConfig(**{**cfg.__dict__, "t_range": (study.t_grid[0], study.t_grid[-1])})
        spec = MultiplierSpec(cfg.multiplier.distribution, cfg.multiplier.B, boot_seed)
        meta.update({"reps": study.R, "failures": report.failures, "replicate0_data_seed": data_seed})
        estimate_and_emit(simulate_dgp(dgp0), cfg0, out, spec, meta)
    (out / "report.json").write_text(json.dumps(meta, indent=1, default=float))
    return meta


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdnsm", description="Doubly-robust dose-response and "
                                 "quantile dose-response curves with high-dimensional controls.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", type=Path, help="flat key = value configuration file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--input", type=Path)
    ap.add_argument("--bandwidth", type=float, help="fixed bandwidth h (skips the rule of thumb)")
    ap.add_argument("--taus", help="comma-separated quantile levels, e.g. 0.25,0.5,0.75")
    ap.add_argument("--B", type=int, help="bootstrap replicates")
    ap.add_argument("--reps", type=int, help="Monte Carlo replications (mc-study)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = {}
        if args.config is not None:
            if not args.config.exists():
                raise ConfigError(f"{args.config}: no such file")
            raw = parse_config_text(args.config.read_text(encoding="utf-8"))
        overrides = {"seed": args.seed, "out": args.out, "input": args.input,
                     "bandwidth_override": args.bandwidth, "taus": args.taus, "B": args.B,
                     "reps": args.reps}
        raw.update({k: str(v) for k, v in overrides.items() if v is not None})
        run(build_run_config(args.mode, raw))
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

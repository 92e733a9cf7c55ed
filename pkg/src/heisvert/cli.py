"""Command-line front end: ``heisvert {construct,verify,dimension,reduce,coarea}``.

Exit codes: 0 when every check passes, 1 when a mathematical invariant is
violated, 2 for usage or input errors. Equal configurations give
byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from heisvert.cascade import CascadeError, box_dimension_estimate, run_cascade
from heisvert.contact import (
    BallRegion,
    BoxRegion,
    CascadeDecayError,
    ContactMap,
    ContactPotential,
    ReductionError,
    coarea_check,
    vitali_cascade,
)
from heisvert.curves import (
    DomainError,
    Monotonicity,
    SampledCurve,
    multiscale_pairs,
    monotonicity_constants_check,
    verify_monotone,
    verify_vertical,
    vertical_segment,
)
from heisvert.group import DEFAULT_TOL

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2

# Curves longer than this are checked on multiscale pair sets instead of all pairs.
ALL_PAIRS_LIMIT = 3000

DEFAULTS: dict[str, dict[str, Any]] = {
    "construct": {
        "phi": 1,
        "levels": 6,
        "rho": 2.0,
        "kappa": 0.95,
        "lam": 1.0,
        "lam_prime": 0.5,
        "epsilon": 0.5,
        "points_per_loop": 16,
        "verify": True,
    },
    "verify": {"lam": 1.0, "n_triples": 10_000},
    "dimension": {"scales": None, "scale_range": None, "stop_factor": 3.0, "min_decades": 2.0},
    "reduce": {"epsilon": 0.3, "max_levels": 3, "tiers": 1},
    "coarea": {
        "map": "identity",
        "r": 0.5,
        "region": "box",
        "n_fibers": 1024,
        "epsilon": 0.3,
        "max_levels": 3,
        "calibration": None,
        "max_failed_fraction": 0.05,
    },
}


class UsageError(Exception):
    """Bad parameters or unreadable input."""


class InvariantError(Exception):
    """A mathematical check failed; carries the report to print."""

    def __init__(self, message: str, report: dict | None = None) -> None:
        super().__init__(message)
        self.report = report


@dataclass
class RunConfig:
    subcommand: str
    seed: int = 0
    tol: float | None = None
    out: Path | None = None
    threads: int = 1
    params: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _write(cfg: RunConfig, name: str, text: str) -> None:
    if cfg.out is None:
        return
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / name).write_text(text)


def _load_curve(path: str) -> SampledCurve:
    try:
        return SampledCurve.loads(Path(path).read_text())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read curve {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_construct(cfg: RunConfig) -> dict:
    p = cfg.params
    phi = int(p["phi"])
    if phi not in (1, -1):
        raise UsageError("phi must be 1 or -1")
    if int(p["levels"]) < 0 or float(p["rho"]) <= 1.0 or not 0 < float(p["kappa"]) < 1:
        raise UsageError("need levels >= 0, rho > 1 and 0 < kappa < 1")
    if not 0 < float(p["lam_prime"]) < float(p["lam"]):
        raise UsageError("need 0 < lam_prime < lam")
    try:
        res = run_cascade(
            vertical_segment(1.0),
            float(p["lam"]),
            float(p["lam_prime"]),
            float(p["epsilon"]),
            phi,
            int(p["levels"]),
            rho=float(p["rho"]),
            kappa_override=float(p["kappa"]),
            points_per_loop=int(p["points_per_loop"]),
            verify=bool(p["verify"]),
            seed=cfg.seed,
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    except CascadeError as exc:
        raise InvariantError(str(exc), {"error": str(exc)}) from exc
    ells = [s.measure for s in res.states]
    steps = np.diff(ells) * phi
    summary = {
        "phi": phi,
        "rho": res.rho,
        "kappa": res.kappa,
        "lam_prime": res.lam_prime,
        "scale": res.scale,
        "samples": int(res.t.size),
        "ell": ells,
        "ell_monotone": bool(np.all(steps > 0)),
        "levels": [
            {
                "i": s.level,
                "ell_i": s.measure,
                "min_slope": s.min_slope,
                "slope_bound": s.slope_bound,
                "max_drift": s.max_drift,
                "speed_ratio": list(s.speed_ratio) if s.speed_ratio else None,
                "vertical_ok": s.vertical_ok,
                "min_cone_ratio": s.min_cone_ratio,
            }
            for s in res.states
        ],
        "window_checked": res.window_checked,
        "window_violations": res.window_violations,
    }
    _write(cfg, "curve.json", res.final.dumps() + "\n")
    _write(cfg, "levels.csv", res.level_csv())
    _write(cfg, "summary.json", dumps(summary))
    if not summary["ell_monotone"]:
        raise InvariantError("level measures are not monotone in the direction of phi", summary)
    return summary


def cmd_verify(cfg: RunConfig, curve_path: str) -> dict:
    curve = _load_curve(curve_path)
    lam = float(cfg.params["lam"])
    if not lam > 0:
        raise UsageError("lam must be positive")
    tol = DEFAULT_TOL if cfg.tol is None else cfg.tol
    pairs = multiscale_pairs(len(curve)) if len(curve) > ALL_PAIRS_LIMIT else None
    vert = verify_vertical(curve, lam, pairs, tol)
    mono = verify_monotone(curve, pairs)
    report: dict[str, Any] = {
        "samples": len(curve),
        "pairs": "all" if pairs is None else "multiscale",
        "vertical": vert.to_json(),
        "monotone": mono.value,
    }
    ok = vert.ok and mono is not Monotonicity.NEITHER
    if mono is not Monotonicity.NEITHER:
        oriented = curve if mono is Monotonicity.INCREASING else SampledCurve(
            curve.t, curve.points[::-1].copy(), curve.meta
        )
        consts = monotonicity_constants_check(
            oriented, lam, int(cfg.params["n_triples"]), cfg.seed, tol
        )
        report["constants"] = consts.to_json()
        ok = ok and consts.ok
    report["ok"] = ok
    _write(cfg, "verify.json", dumps(report))
    if not ok:
        raise InvariantError("curve fails the verticality checks", report)
    return report


def _parse_scales(p: dict) -> list[float]:
    if p.get("scales"):
        vals = p["scales"]
        if isinstance(vals, str):
            vals = [v for v in vals.split(",") if v.strip()]
        return [float(v) for v in vals]
    if p.get("scale_range"):
        vals = p["scale_range"]
        if isinstance(vals, str):
            vals = vals.split(",")
        lo, hi, n = float(vals[0]), float(vals[1]), int(vals[2])
        return np.geomspace(lo, hi, n).tolist()
    raise UsageError("give --scales or --scale-range")


def cmd_dimension(cfg: RunConfig, curve_path: str) -> dict:
    curve = _load_curve(curve_path)
    try:
        scales = _parse_scales(cfg.params)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"bad scales: {exc}") from exc
    if any(not s > 0 for s in scales):
        raise UsageError("scales must be positive")
    sf = cfg.params.get("stop_factor")
    try:
        fit = box_dimension_estimate(
            curve, scales, None if sf is None else float(sf), float(cfg.params["min_decades"])
        )
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    report = {
        "estimate": fit.estimate,
        "intercept": fit.intercept,
        "scales": fit.scales,
        "counts": fit.counts,
        "residuals": fit.residuals,
    }
    _write(cfg, "dimension.json", dumps(report))
    return report


def _run_reduce(cfg: RunConfig, epsilon: float, max_levels: int, tiers: int = 1):
    if not epsilon > 0 or max_levels < 1 or tiers < 1:
        raise UsageError("need epsilon > 0, max_levels >= 1, tiers >= 1")
    try:
        return vitali_cascade(epsilon, max_levels, tiers=tiers, seed=cfg.seed)
    except (CascadeDecayError, ReductionError) as exc:
        raise InvariantError(str(exc), {"error": str(exc)}) from exc


def cmd_reduce(cfg: RunConfig) -> dict:
    p = cfg.params
    rep = _run_reduce(cfg, float(p["epsilon"]), int(p["max_levels"]), int(p["tiers"]))
    out = rep.to_json()
    _write(cfg, "reduce.json", dumps(out))
    return out


def map_from_spec(spec: dict) -> ContactMap:
    """Build a map from ``{"steps": [{"flow": {...}}, {"dilation": r}, {"translation": [x, y, z]}]}``."""
    steps = ContactMap.identity()
    for item in spec.get("steps", []):
        if not isinstance(item, dict) or len(item) != 1:
            raise UsageError(f"bad map step {item!r}")
        (kind, val), = item.items()
        if kind == "flow":
            psi = ContactPotential(
                float(val.get("amplitude", 1.0)),
                tuple(float(c) for c in val.get("center", (0.0, 0.0, 0.0))),
                float(val.get("radius", 1.0)),
            )
            step = ContactMap.of_flow(psi, float(val["t"]))
        elif kind == "dilation":
            step = ContactMap.dilation(float(val))
        elif kind == "translation":
            step = ContactMap.translation(np.asarray(val, dtype=float))
        else:
            raise UsageError(f"unknown map step {kind!r}")
        steps = steps.then(step)
    return steps


def cmd_coarea(cfg: RunConfig) -> dict:
    p = cfg.params
    region_name = p["region"]
    if region_name == "box":
        region = BoxRegion((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    elif region_name == "ball":
        region = BallRegion()
    else:
        raise UsageError("region must be 'box' or 'ball'")
    n_fibers = int(p["n_fibers"])
    if n_fibers < 16:
        raise UsageError("need at least 16 fibers")
    ident = coarea_check(ContactMap.identity(), region, n_fibers, seed=cfg.seed)
    c = ident.ratio if p.get("calibration") is None else float(p["calibration"])
    kind = p["map"]
    report: dict[str, Any] = {"calibration_run": ident.to_json(), "calibration": c}
    tol = 0.02 if cfg.tol is None else cfg.tol
    if kind == "identity":
        res = ident
        res.calibration = c
    elif kind == "dilation":
        r = float(p["r"])
        if not r > 0:
            raise UsageError("dilation factor must be positive")
        res = coarea_check(ContactMap.dilation(r), region, n_fibers, calibration=c, seed=cfg.seed)
    elif kind == "reduced":
        rep = _run_reduce(cfg, float(p["epsilon"]), int(p["max_levels"]))
        res = coarea_check(rep.beta, BallRegion(), n_fibers, calibration=c, seed=cfg.seed)
        base = coarea_check(ContactMap.identity(), BallRegion(), n_fibers, seed=cfg.seed)
        report["cascade"] = rep.to_json()
        report["predicted_factor"] = rep.masses[-1] / rep.masses[0]
        report["measured_factor"] = res.lhs / base.lhs
    elif kind.endswith(".json"):
        try:
            spec = json.loads(Path(kind).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read map {kind}: {exc}") from exc
        res = coarea_check(map_from_spec(spec), region, n_fibers, calibration=c, seed=cfg.seed)
    else:
        raise UsageError("map must be identity, dilation, reduced or a JSON file")
    report["result"] = res.to_json()
    failed = res.n_failed / res.n_fibers
    report["failed_fraction"] = failed
    ok = failed <= float(p["max_failed_fraction"])
    if kind in ("identity", "dilation") or kind.endswith(".json"):
        report["within_tolerance"] = abs(res.calibrated_ratio - 1.0) <= tol
        ok = ok and report["within_tolerance"]
    if kind == "reduced":
        pf, mf = report["predicted_factor"], report["measured_factor"]
        report["within_tolerance"] = abs(mf / pf - 1.0) <= max(tol, 0.1)
        ok = ok and report["within_tolerance"]
    report["ok"] = ok
    _write(cfg, "coarea.json", dumps(report))
    if not ok:
        raise InvariantError("coarea check outside tolerance", report)
    return report


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--out", type=Path, default=None, help="directory for output files")
    common.add_argument("--config", type=Path, default=None, help="JSON file of parameters")

    parser = argparse.ArgumentParser(prog="heisvert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    c = sub.add_parser("construct", parents=[common], help="run the helix cascade")
    c.add_argument("--phi", type=int)
    c.add_argument("--levels", type=int)
    c.add_argument("--rho", type=float)
    c.add_argument("--kappa", type=float)
    c.add_argument("--lam", type=float)
    c.add_argument("--lam-prime", dest="lam_prime", type=float)
    c.add_argument("--points-per-loop", dest="points_per_loop", type=int)
    c.add_argument("--no-verify", dest="verify", action="store_const", const=False)

    v = sub.add_parser("verify", parents=[common], help="check a curve for verticality")
    v.add_argument("curve")
    v.add_argument("--lam", type=float)
    v.add_argument("--n-triples", dest="n_triples", type=int)

    d = sub.add_parser("dimension", parents=[common], help="box-counting dimension of a curve")
    d.add_argument("curve")
    d.add_argument("--scales", type=str, help="comma-separated radii")
    d.add_argument("--scale-range", dest="scale_range", type=str, help="lo,hi,n (geometric)")
    d.add_argument("--stop-factor", dest="stop_factor", type=float)
    d.add_argument("--min-decades", dest="min_decades", type=float)

    r = sub.add_parser("reduce", parents=[common], help="run the multiscale ball cascade")
    r.add_argument("--epsilon", type=float)
    r.add_argument("--max-levels", dest="max_levels", type=int)
    r.add_argument("--tiers", type=int)

    co = sub.add_parser("coarea", parents=[common], help="fiber-integral consistency check")
    co.add_argument("--map", type=str, help="identity, dilation, reduced or a JSON map file")
    co.add_argument("--r", type=float, help="dilation factor")
    co.add_argument("--region", type=str, choices=["box", "ball"])
    co.add_argument("--n-fibers", dest="n_fibers", type=int)
    co.add_argument("--epsilon", type=float)
    co.add_argument("--max-levels", dest="max_levels", type=int)
    co.add_argument("--calibration", type=float)
    return parser


def _threads() -> int:
    raw = os.environ.get("HEIS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"HEIS_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"HEIS_THREADS must be a positive integer, got {raw!r}")
    return n


def make_config(args: argparse.Namespace) -> RunConfig:
    sub = args.subcommand
    params = dict(DEFAULTS[sub])
    file_cfg: dict[str, Any] = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(args.config.read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(file_cfg) - set(params) - {"seed", "tol", "out"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        params.update({k: v for k, v in file_cfg.items() if k in params})
    for key in params:
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    tol = args.tol if args.tol is not None else file_cfg.get("tol")
    out = args.out if args.out is not None else (Path(file_cfg["out"]) if "out" in file_cfg else None)
    return RunConfig(sub, seed, None if tol is None else float(tol), out, _threads(), params)


def run(argv: list[str] | None = None) -> tuple[int, dict | None]:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_USAGE if exc.code else EXIT_OK), None
    try:
        cfg = make_config(args)
        if cfg.subcommand == "construct":
            report = cmd_construct(cfg)
        elif cfg.subcommand == "verify":
            report = cmd_verify(cfg, args.curve)
        elif cfg.subcommand == "dimension":
            report = cmd_dimension(cfg, args.curve)
        elif cfg.subcommand == "reduce":
            report = cmd_reduce(cfg)
        else:
            report = cmd_coarea(cfg)
    except UsageError as exc:
        print(f"heisvert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE, None
    except InvariantError as exc:
        print(f"heisvert: check failed: {exc}", file=sys.stderr)
        if exc.report is not None:
            sys.stdout.write(dumps(exc.report))
        return EXIT_INVARIANT, exc.report
    sys.stdout.write(dumps(report))
    return EXIT_OK, report


def main(argv: list[str] | None = None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``octahedral <command> [options]``."""

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import search, stability
from .dynamics import EnergyContext
from .integrator import IntegratorConfig, export_csv, flow

log = logging.getLogger("octahedral")


@dataclasses.dataclass
class RunConfig:
    energy: float = -1.0
    step: float = 1e-5
    tol_event: float = 1e-12
    tol_root: float = 1e-10
    tol_closure: float = 1e-5
    tol_boundary: float = 1e-4
    max_s: float = 5.0
    record_stride: int = 10
    out: str = "out"
    workers: int = 1
    alpha_range: tuple = (0.5, 3.3, 0.1)
    beta_range: tuple = (0.0, 5.0, 0.25)
    max_error_fraction: float = 0.25
    alpha: float = None
    beta: float = None
    span: float = None
    orbit: str = None

    def __post_init__(self):
        if not self.energy < 0:
            raise ValueError("energy must be negative")
        if not (self.step > 0 and self.tol_event > 0 and self.tol_root > 0 and self.tol_closure > 0
                and self.tol_boundary > 0):
            raise ValueError("step and tolerances must be positive")
        self.alpha_range = tuple(float(v) for v in self.alpha_range)
        self.beta_range = tuple(float(v) for v in self.beta_range)

    @property
    def ctx(self):
        return EnergyContext(self.energy)

    @property
    def integrator(self):
        return IntegratorConfig(step=self.step, max_s=self.max_s, event_tol=self.tol_event,
                                record_stride=self.record_stride)

    def digest(self):
        """Hash of every setting that can change results (not where or how parallel)."""
        values = dataclasses.asdict(self)
        for key in ("out", "workers"):
            values.pop(key)
        blob = json.dumps(values, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def grid(rng):
    lo, hi, d = rng
    n = int(round((hi - lo) / d))
    return [round(lo + k * d, 12) for k in range(n + 1)]


def _parse_range(text):
    parts = [float(v) for v in text.split(":")]
    if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
        raise argparse.ArgumentTypeError("expected lo:hi:step")
    return tuple(parts)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _outdir(cfg):
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, payload, cfg):
    payload = {"config_sha256": cfg.digest(), **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")


class _CsvOut:
    def __init__(self, path, columns, cfg):
        self.fh = open(path, "w", newline="")
        self.fh.write(f"# config_sha256={cfg.digest()}\n")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(columns)

    def row(self, values):
        self.w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in values])
        self.fh.flush()

    def close(self):
        self.fh.close()


def _pool_map(fn, items, workers):
    """Ordered results, serially or from a process pool."""
    if workers <= 1:
        yield from map(fn, items)
        return
    pool = ProcessPoolExecutor(max_workers=workers)
    try:
        yield from pool.map(fn, items)
    finally:
        pool.shutdown(cancel_futures=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_search(cfg):
    out = _outdir(cfg)
    ctx, icfg = cfg.ctx, cfg.integrator
    try:
        sol = search.find_orbit(ctx, icfg, alphas=grid(cfg.alpha_range), tol=cfg.tol_root)
    except search.BracketError as exc:
        _write_json(out / "orbit.json", {
            "error": str(exc),
            "residuals": [dataclasses.asdict(r) for r in exc.curve],
        }, cfg)
        log.error("search failed: %s", exc)
        return 1
    payload = sol.to_dict()
    _write_json(out / "orbit.json", payload, cfg)
    traj = flow(sol.gamma0, sol.period, icfg, ctx, record=True)
    export_csv(out / "trajectory.csv", traj, ctx, header_comment=f"config_sha256={cfg.digest()}")
    log.info("alpha=%.9f beta=%.9f period=%.9f closure=%.3g",
             sol.alpha, sol.beta, sol.period, sol.closure_error)
    return 0 if sol.closure_error < cfg.tol_closure else 1


def _classify_point(args):
    alpha, beta, energy, icfg = args
    v = search.classify_sigma(search.SigmaQuery(alpha, beta), EnergyContext(energy), icfg)
    return alpha, beta, v.outcome.value, v.s_star


def _boundary_point(args):
    alpha, energy, icfg, tol = args
    try:
        lo, hi = search.sigma_boundary_bracket(alpha, EnergyContext(energy), icfg, tol=tol)
        if hi is None:
            return alpha, lo, float("nan"), "undecided"
        return alpha, lo, hi, "ok"
    except search.SearchError as exc:
        return alpha, float("nan"), float("nan"), type(exc).__name__


def cmd_sigma_map(cfg):
    out = _outdir(cfg)
    icfg = cfg.integrator
    alphas, betas = grid(cfg.alpha_range), grid(cfg.beta_range)
    points = [(a, b, cfg.energy, icfg) for a in alphas for b in betas]
    n_bad = 0
    sheet = _CsvOut(out / "sigma_map.csv", ["alpha", "beta", "verdict", "s_star"], cfg)
    try:
        for a, b, verdict, s_star in _pool_map(_classify_point, points, cfg.workers):
            n_bad += verdict == search.Outcome.INCONCLUSIVE.value
            sheet.row([a, b, verdict, s_star])
        sheet.close()
        line = _CsvOut(out / "sigma_boundary.csv", ["alpha", "beta_lo", "beta_hi", "status"], cfg)
        tasks = [(a, cfg.energy, icfg, cfg.tol_boundary) for a in alphas]
        for row in _pool_map(_boundary_point, tasks, cfg.workers):
            line.row(row)
        line.close()
    except KeyboardInterrupt:
        sheet.close()
        log.warning("interrupted; partial results kept in %s", out)
        return 130
    frac = n_bad / max(1, len(points))
    return 0 if frac <= cfg.max_error_fraction else 1


def _load_orbit(cfg):
    if cfg.alpha is not None and cfg.beta is not None:
        return search.solution_at(cfg.alpha, cfg.beta, cfg.ctx, cfg.integrator)
    if cfg.orbit:
        data = json.loads(Path(cfg.orbit).read_text())
        return search.solution_at(data["alpha"], data["beta"], cfg.ctx, cfg.integrator)
    return search.find_orbit(cfg.ctx, cfg.integrator, alphas=grid(cfg.alpha_range), tol=cfg.tol_root)


def cmd_stability(cfg):
    out = _outdir(cfg)
    sol = _load_orbit(cfg)
    rep = stability.analyze(sol, cfg.integrator, cfg.ctx)
    payload = rep.to_dict()
    payload["orbit"] = {"alpha": sol.alpha, "beta": sol.beta, "tau": sol.tau,
                        "closure_error": sol.closure_error}
    _write_json(out / "stability.json", payload, cfg)
    log.info("block eigenvalues %s -> %s", rep.block_eigenvalues, rep.verdict.value)
    return 0


def _curve_point(args):
    alpha, energy, icfg, tol = args
    return search.beta_curve([alpha], EnergyContext(energy), icfg, tol)[0]


def cmd_curves(cfg):
    out = _outdir(cfg)
    tasks = [(a, cfg.energy, cfg.integrator, cfg.tol_root) for a in grid(cfg.alpha_range)]
    sheet = _CsvOut(out / "curves.csv", ["alpha", "beta", "residual", "status"], cfg)
    n_bad = 0
    try:
        for r in _pool_map(_curve_point, tasks, cfg.workers):
            n_bad += r.status != "ok"
            sheet.row([r.alpha, r.beta, r.residual, r.status])
    except KeyboardInterrupt:
        return 130
    finally:
        sheet.close()
    return 0 if n_bad / max(1, len(tasks)) <= cfg.max_error_fraction else 1


def cmd_integrate(cfg):
    out = _outdir(cfg)
    if cfg.alpha is None or cfg.beta is None:
        log.error("integrate needs --alpha and --beta")
        return 2
    span = cfg.span
    if span is None:
        span = 12.0 * search.state_at_tau(cfg.alpha, cfg.beta, cfg.ctx, cfg.integrator)[0]
    traj = flow(search.collision_state(cfg.alpha, cfg.beta), span, cfg.integrator, cfg.ctx, record=True)
    export_csv(out / "trajectory.csv", traj, cfg.ctx, header_comment=f"config_sha256={cfg.digest()}")
    return 0


COMMANDS = {
    "search": cmd_search,
    "sigma-map": cmd_sigma_map,
    "stability": cmd_stability,
    "curves": cmd_curves,
    "integrate": cmd_integrate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values; flags win")
    common.add_argument("--energy", type=float)
    common.add_argument("--step", type=float)
    common.add_argument("--tol-event", type=float)
    common.add_argument("--tol-root", type=float)
    common.add_argument("--tol-closure", type=float)
    common.add_argument("--tol-boundary", type=float)
    common.add_argument("--max-s", type=float)
    common.add_argument("--record-stride", type=int)
    common.add_argument("--out")
    common.add_argument("--workers", type=int)
    common.add_argument("--alpha-range", type=_parse_range, metavar="LO:HI:STEP")
    common.add_argument("--beta-range", type=_parse_range, metavar="LO:HI:STEP")
    common.add_argument("--max-error-fraction", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="octahedral", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("search", parents=[common], help="find the periodic orbit")
    sub.add_parser("sigma-map", parents=[common], help="classify a grid and trace the Sigma boundary")
    p = sub.add_parser("stability", parents=[common], help="linear stability report")
    p.add_argument("--orbit", help="orbit.json from a previous search")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    sub.add_parser("curves", parents=[common], help="beta(alpha) and residual(alpha) tables")
    p = sub.add_parser("integrate", parents=[common], help="write a trajectory CSV")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--span", type=float)
    return parser


def config_from_args(args):
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    for key, val in vars(args).items():
        if key in fields and val is not None:
            values[key] = val
    unknown = set(values) - fields
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, TypeError) as exc:
        print(f"octahedral: {exc}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())

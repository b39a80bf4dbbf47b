"""Command-line entry point.

Subcommands: train, shoot, compare, plotdata, validate.
Exit codes: 0 ok, 2 input error, 3 training divergence, 4 invalid mode.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import artifacts, pmp, shooting, trainer
from .networks import NonFiniteOutput
from .pmp import Scenario
from .scenario_file import ScenarioError, ScenarioFile, dump, load

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_MODE = 4

MIN_SEPARATION = 5.0  # [m] between random initial and final positions
GRID_RESOLUTION = 61

log = logging.getLogger("pmppinn")


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path) -> ScenarioFile:
    if path is None:
        raise CliError("--scenario is required", EXIT_INPUT)
    try:
        return load(path)
    except ScenarioError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc


def _config(spec: ScenarioFile, profile: str, seed: int, early_stop: bool = True) -> trainer.TrainConfig:
    kw = spec.train.overrides()
    kw["seed"] = seed
    if not early_stop:
        kw["stop_threshold"] = 0.0
    return trainer.TrainConfig.profile(profile, **kw)


def _weights(spec: ScenarioFile, s: Scenario) -> trainer.LossWeights:
    if spec.train.weights is not None:
        try:
            return trainer.LossWeights(tuple(spec.train.weights))
        except ValueError as exc:
            raise CliError(f"train.weights: {exc}", EXIT_INPUT) from exc
    return trainer.LossWeights.for_scenario(s)


def _summary(s: Scenario, traj: trainer.Trajectory) -> dict:
    return {
        "tf": traj.tf,
        "cost": traj.cost,
        "max_abs_H": float(np.max(np.abs(traj.H))),
        "start_miss": float(np.hypot(*(traj.x[0] - np.array(s.x0)))),
        "end_miss": float(np.hypot(*(traj.x[-1] - np.array(s.xf)))),
    }


def shot_rows(s: Scenario, shot: shooting.ShotResult) -> np.ndarray:
    """Trajectory CSV rows for a baseline shot (tau = t / arrival time)."""
    p = shot.costates(s)
    c = np.asarray(s.field.value(shot.x), dtype=float)
    tau = shot.t / shot.arrival_time if shot.arrival_time > 0 else np.zeros_like(shot.t)
    return np.column_stack([tau, shot.t, shot.x[:, 0], shot.x[:, 1], shot.psi, p[:, 0], p[:, 1],
                            shot.hamiltonian(s), c])


def draw_pair(rng: np.random.Generator, workspace) -> tuple[tuple[float, float], tuple[float, float]]:
    lo, hi = workspace
    while True:
        a = rng.uniform(lo, hi, size=2)
        b = rng.uniform(lo, hi, size=2)
        if np.hypot(*(a - b)) >= MIN_SEPARATION:
            return (float(a[0]), float(a[1])), (float(b[0]), float(b[1]))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    spec = _load(args.scenario)
    s = spec.build()
    print(f"ok: {'static' if s.static else 'time-varying'} field with {len(s.field.bases)} bases")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _load(args.scenario)
    s = spec.build()
    seed = spec.seed if args.seed is None else args.seed
    cfg = _config(spec, args.profile, seed, not args.no_early_stop)
    weights = _weights(spec, s)
    out = _out_dir(args.out_dir)
    (out / "scenario.yaml").write_text(dump(spec))
    start = time.perf_counter()
    try:
        if spec.train.mode == "conditioned":
            result = trainer.train_conditioned(s, cfg, weights)
            result.trajectory = trainer.trajectory(result.model, s, cfg.n_points)
        else:
            result = trainer.train_single(s, cfg, weights)
    except (trainer.TrainingError, NonFiniteOutput) as exc:
        rows = getattr(exc, "log_rows", [])
        artifacts.write_csv(out / "train_log.csv", trainer.LOG_COLUMNS, rows)
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    log.info("trained in %.1f s", time.perf_counter() - start)
    result.model.save(out / "model.npz")
    artifacts.write_csv(out / "train_log.csv", trainer.LOG_COLUMNS, result.log_rows)
    artifacts.write_trajectory(out / "trajectory.csv", result.trajectory.rows())
    report = result.report.as_dict()
    report.pop("wall_time")  # keeps reruns byte-identical
    report.update(_summary(s, result.trajectory), profile=args.profile, seed=seed, mode=spec.train.mode)
    artifacts.write_json(out / "report.json", report)
    print(f"L1..L9 max {max(result.report.losses[:9]):.3e}, cost {result.trajectory.cost:.6g}")
    return EXIT_OK


def cmd_shoot(args) -> int:
    spec = _load(args.scenario)
    s = spec.build()
    if not s.static:
        raise CliError("reduction invalid: shooting needs a static threat field", EXIT_MODE)
    out = _out_dir(args.out_dir)
    (out / "scenario.yaml").write_text(dump(spec))
    shot = shooting.solve(s)
    artifacts.write_trajectory(out / "trajectory.csv", shot_rows(s, shot))
    artifacts.write_json(out / "shot.json", {
        "psi0": shot.psi0,
        "converged": shot.converged,
        "miss": shot.miss,
        "arrival_time": shot.arrival_time,
        "cost": shot.cost,
        "max_abs_H": float(np.max(np.abs(shot.hamiltonian(s)))),
        "candidates": [list(c) for c in shot.candidates],
    })
    status = "converged" if shot.converged else "NOT converged"
    print(f"{status}: psi0 {shot.psi0:.6f}, cost {shot.cost:.6g}, miss {shot.miss:.2e}")
    return EXIT_OK


COMPARE_COLUMNS = (
    "trial", "template", "status", "x0_1", "x0_2", "xf_1", "xf_2",
    *trainer.LOSS_NAMES, "max_abs_H", "tf", "cost", "baseline_cost", "baseline_converged", "delta",
)
AGGREGATED = (*trainer.LOSS_NAMES[:9], "delta")


def _templates(path) -> list[tuple[str, ScenarioFile]]:
    if path is None:
        raise CliError("--scenario is required", EXIT_INPUT)
    p = Path(path)
    files = sorted(p.glob("*.yaml")) + sorted(p.glob("*.yml")) if p.is_dir() else [p]
    if not files:
        raise CliError(f"no scenario files in {p}", EXIT_INPUT)
    return [(f.stem, _load(f)) for f in files]


def _trial(i: int, name: str, spec: ScenarioFile, rng, args, seed: int) -> list:
    base = spec.build()
    x0, xf = draw_pair(rng, base.workspace)
    nan = math.nan
    row = [i, name, "ok", *x0, *xf] + [nan] * 10 + [nan, nan, nan, nan, False, nan]
    try:
        s = base.with_endpoints(x0, xf)
        cfg = _config(spec, args.profile, seed + i, not args.no_early_stop)
        res = trainer.train_single(s, cfg, _weights(spec, s))
        row[7:17] = res.report.losses
        summ = _summary(s, res.trajectory)
        row[17:20] = [summ["max_abs_H"], summ["tf"], summ["cost"]]
        if s.static:
            shot = shooting.solve(s)
            row[21] = shot.converged
            if shot.converged:
                row[20] = shot.cost
                row[22] = shooting.cost_gap(summ["cost"], shot.cost)
            else:
                row[20] = shot.cost
    except (trainer.TrainingError, NonFiniteOutput, ValueError) as exc:
        row[2] = f"failed: {type(exc).__name__}"
        log.warning("trial %d failed: %s", i, exc)
    return row


def aggregate(rows: list[list]) -> dict:
    """Mean and sample standard deviation over successful trials.

    delta only counts trials whose baseline converged.
    """
    idx = {name: COMPARE_COLUMNS.index(name) for name in AGGREGATED}
    ok = [r for r in rows if r[2] == "ok"]
    mean, std, count = {}, {}, {}
    for name, j in idx.items():
        vals = np.array([float(r[j]) for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        count[name] = int(vals.size)
        mean[name] = float(np.mean(vals)) if vals.size else None
        std[name] = float(np.std(vals, ddof=1)) if vals.size > 1 else None
    return {"n_trials": len(rows), "n_failed": len(rows) - len(ok), "count": count, "mean": mean, "std": std}


def cmd_compare(args) -> int:
    templates = _templates(args.scenario)
    seed = 0 if args.seed is None else args.seed
    if args.trials < 0:
        raise CliError("--trials must be non-negative", EXIT_INPUT)
    out = _out_dir(args.out_dir)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(args.trials):
        name, spec = templates[i % len(templates)]
        rows.append(_trial(i, name, spec, rng, args, seed))
        log.info("trial %d: %s", i, rows[-1][2])
    artifacts.write_csv(out / "compare_rows.csv", COMPARE_COLUMNS, rows)
    report = aggregate(rows)
    report.update(profile=args.profile, seed=seed, early_stop=not args.no_early_stop)
    artifacts.write_json(out / "compare_report.json", report)
    print(f"{report['n_trials']} trials, {report['n_failed']} failed, mean delta {report['mean']['delta']}")
    return EXIT_OK


def _ddt(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.gradient(y, t, edge_order=2)


def plot_tables(s: Scenario, tr: dict) -> dict[str, tuple[tuple[str, ...], np.ndarray]]:
    """Column tables for Hamiltonian, residual overlays, field raster and path."""
    tau, t = tr["tau"], tr["t"]
    x = np.column_stack([tr["x1"], tr["x2"]])
    psi, p1, p2 = tr["psi"], tr["p1"], tr["p2"]
    tf = float(t[-1])
    v = s.speed
    if s.static:
        hd = np.zeros_like(tau)
    else:
        hd = pmp.hd_profile(s, tf, tau, x)
    ct = np.asarray(s.field.dc_dt(x, t), dtype=float)
    g1, g2 = (np.asarray(g, dtype=float) for g in s.field.grad_x(x, t))
    dH = _ddt(tr["H"], t)
    tables = {}
    tables["hamiltonian"] = (("tau", "t", "H", "H_d", "H_minus_H_d", "dH_dt", "dc_dt"),
                             np.column_stack([tau, t, tr["H"], hd, tr["H"] - hd, dH, ct]))
    dx1, dx2 = _ddt(x[:, 0], t), _ddt(x[:, 1], t)
    vc, vs = v * np.cos(psi), v * np.sin(psi)
    tables["kinematics"] = (
        ("tau", "t", "dx1_dt", "v_cos_psi", "res_x1", "dx2_dt", "v_sin_psi", "res_x2"),
        np.column_stack([tau, t, dx1, vc, dx1 - vc, dx2, vs, dx2 - vs]),
    )
    dp1, dp2 = _ddt(p1, t), _ddt(p2, t)
    tables["costates"] = (
        ("tau", "t", "dp1_dt", "minus_dc_dx1", "res_p1", "dp2_dt", "minus_dc_dx2", "res_p2"),
        np.column_stack([tau, t, dp1, -g1, dp1 + g1, dp2, -g2, dp2 + g2]),
    )
    tables["heading"] = (("tau", "t", "dH_dpsi"),
                         np.column_stack([tau, t, v * (p2 * np.cos(psi) - p1 * np.sin(psi))]))
    lo, hi = s.workspace
    g = np.linspace(lo, hi, GRID_RESOLUTION)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    grid = []
    for tt in ([0.0] if s.static else [0.0, tf]):
        c = np.asarray(s.field.value(np.stack([X1, X2], -1), tt), dtype=float) * np.ones_like(X1)
        grid.append(np.column_stack([np.full(X1.size, tt), X1.ravel(), X2.ravel(), c.ravel()]))
    tables["field_grid"] = (("t", "x1", "x2", "c"), np.vstack(grid))
    tables["path"] = (("t", "x1", "x2"), np.column_stack([t, x]))
    return tables


def cmd_plotdata(args) -> int:
    run = Path(args.run_dir)
    traj_path, scen_path = run / "trajectory.csv", run / "scenario.yaml"
    for p in (traj_path, scen_path):
        if not p.is_file():
            raise CliError(f"missing run artifact {p}", EXIT_INPUT)
    s = _load(scen_path).build()
    try:
        tr = artifacts.read_trajectory(traj_path)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    out = _out_dir(args.out_dir or run / "plot")
    for name, (header, table) in plot_tables(s, tr).items():
        artifacts.write_csv(out / f"{name}.csv", header, table.tolist())
    print(f"plot data written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmppinn", description="PINN and shooting solvers for minimum-threat paths")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, trials=False, run=False):
        if run:
            p.add_argument("run_dir")
            p.add_argument("--out-dir", default=None)
            return p
        p.add_argument("--scenario", required=True)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--seed", type=int, default=None)
        if trials:
            p.add_argument("--trials", type=int, default=10)
        return p

    p = common(sub.add_parser("train", help="train a PINN on one scenario"))
    p.add_argument("--profile", choices=("full", "desk"), default="full")
    p.add_argument("--no-early-stop", action="store_true", help="always run max_epochs")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("shoot", help="solve with the shooting baseline"))
    p.set_defaults(func=cmd_shoot)

    p = common(sub.add_parser("compare", help="random-pair sweep against the baseline"), trials=True)
    p.add_argument("--profile", choices=("full", "desk"), default="desk")
    p.add_argument("--no-early-stop", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = common(sub.add_parser("plotdata", help="export plot-ready tables"), run=True)
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("validate", help="schema check only")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

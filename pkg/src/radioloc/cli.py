"""Command-line front end: simulate | fit | build-radiomap | locate | evaluate.

Every subcommand is a pure function of its input files, flags, and seed, so
reruns with identical arguments produce byte-identical outputs. Exit codes:
0 success, 2 unreadable or malformed input, 3 degenerate/underdetermined fit.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import DegenerateFitError, InputError, InsufficientDataError
from .evaluation import (
    EvalWorld,
    emit_report,
    run_kest_sweep,
    run_positioning_sweep,
    run_prediction_analysis,
)
from .fitting import (
    FitStrategy,
    StrategyKind,
    fit,
    load_fit_result,
    load_measurements,
    save_fit_result,
    save_measurements,
)
from .floorplan import load_floorplan, save_floorplan
from .ioutil import write_text_atomic
from .positioning import WknnConfig, locate
from .propagation import (
    ModelKind,
    load_access_points,
    load_params,
    save_access_points,
)
from .radiomap import (
    DETECTION_FLOOR_DBM,
    DEVICE_HEIGHT_M,
    NOT_DETECTED_DBM,
    Fingerprint,
    Radiomap,
    build_real_fingerprints,
    ceil_scaled,
    generate_virtual_fingerprints,
    load_radiomap,
    place_virtual_rps,
    save_radiomap,
    select_rps,
)
from .simulator import (
    NoiseConfig,
    grid_rp_positions,
    make_world,
    preset_by_name,
    simulate_campaign,
    template_info,
    template_test_positions,
)

DEFAULT_RHO_GRID = (0.1, 0.2, 0.5, 1.0)
DEFAULT_DV_GRID = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0)
DEFAULT_ALPHA_RANGE = (0.01, 0.25)


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _alpha_range(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition(":")
    return (float(lo), float(hi))


def _strategy_from_args(args) -> FitStrategy:
    if args.strategy == "no-fit":
        if not args.params:
            raise InputError("--strategy no-fit requires --params")
        _, params = load_params(args.params)
        return FitStrategy.no_fit(params)
    return FitStrategy(StrategyKind(args.strategy))


def cmd_simulate(args) -> int:
    noise = NoiseConfig(
        shadowing_sigma_db=args.shadowing_sigma,
        mismatch_sigma_db=args.mismatch_sigma,
        mismatch_corr_m=args.mismatch_corr,
        drift_sigma_db=args.drift_sigma,
    )
    world = make_world(args.template, args.seed, noise=noise,
                       custom_file=args.custom_file)
    preset = preset_by_name(args.preset)
    d_real = args.dr if args.dr is not None else template_info(args.template).dr_max
    rp_positions = grid_rp_positions(world.plan, d_real)
    tp_positions = template_test_positions(args.template, args.seed, world.plan,
                                        args.tp_count)
    measurements, test_points = simulate_campaign(world, rp_positions, tp_positions, preset)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_floorplan(world.plan, out / "floorplan.json")
    save_access_points(world.aps, out / "aps.json")
    save_measurements(measurements, out / "measurements.csv")
    # Target fingerprints use the measurement schema; the id column names the TP.
    rows = ["rp_id,x,y,z,ap_id,rss_dbm,scan_index"]
    for i, tp in enumerate(test_points):
        for ap, value in zip(world.aps, tp.fingerprint.rss):
            rss = "ND" if value == world.sentinel_dbm else repr(float(value))
            rows.append(f"tp{i:03d},{tp.position.x!r},{tp.position.y!r},"
                        f"{tp.position.z!r},{ap.id},{rss},0")
    write_text_atomic(out / "testpoints.csv", "\n".join(rows) + "\n")
    if args.verbose:
        print(f"wrote world artifacts to {out} "
              f"({len(rp_positions)} RPs, {len(tp_positions)} TPs)")
    return 0


def cmd_fit(args) -> int:
    plan = load_floorplan(args.floorplan)
    aps = load_access_points(args.aps)
    measurements = load_measurements(args.measurements)
    strategy = _strategy_from_args(args)
    result = fit(strategy, ModelKind(args.model), plan, aps, measurements)
    save_fit_result(result, args.out)
    if args.verbose:
        print(f"fit ok: residual rms {result.residual_rms_db:.3f} dB "
              f"over {result.m_used} samples")
    return 0


def cmd_build_radiomap(args) -> int:
    plan = load_floorplan(args.floorplan)
    aps = load_access_points(args.aps)
    measurements = load_measurements(args.measurements)
    fit_result = load_fit_result(args.fit)

    real_rps = build_real_fingerprints(measurements, aps, args.sentinel)
    real_rps = select_rps(real_rps, args.rho)
    virtual_rps = []
    if args.dv > 0:
        positions = place_virtual_rps(plan, args.dv, args.placement,
                                      seed=args.seed, z_m=args.rp_height)
        virtual_rps = generate_virtual_fingerprints(
            fit_result, fit_result.model, plan, aps, positions,
            sentinel_dbm=args.sentinel, detection_floor_dbm=args.detection_floor)
    rmap = Radiomap(aps, real_rps + virtual_rps, area_m2=plan.area,
                    sentinel_dbm=args.sentinel)
    save_radiomap(rmap, args.out)
    if args.verbose:
        print(f"radiomap: {rmap.n_real} real + {rmap.n_virtual} virtual RPs")
    return 0


def _load_target(path: str | Path, rmap: Radiomap) -> Fingerprint:
    values = {ap.id: rmap.sentinel_dbm for ap in rmap.aps}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["ap_id", "rss_dbm"]:
                raise InputError(f"{path}: expected header ap_id,rss_dbm")
            for row in reader:
                if not row:
                    continue
                ap_id, rss = row[0], row[1]
                if ap_id not in values:
                    raise InputError(f"{path}: unknown AP {ap_id!r}")
                values[ap_id] = (rmap.sentinel_dbm if rss == "ND" else float(rss))
    except OSError as exc:
        raise InputError(f"cannot read target file {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return Fingerprint([values[ap.id] for ap in rmap.aps])


def cmd_locate(args) -> int:
    rmap = load_radiomap(args.radiomap)
    target = _load_target(args.target, rmap)
    cfg = WknnConfig(k=args.k, alpha=args.alpha, order=args.order,
                     sentinel_dbm=rmap.sentinel_dbm)
    estimate = locate(rmap, target, cfg)
    print(json.dumps({
        "x": estimate.position.x,
        "y": estimate.position.y,
        "z": estimate.position.z,
        "neighbors": [[i, s] for i, s in estimate.neighbors],
    }))
    return 0


def _load_world_dir(world_dir: str | Path, seed: int) -> EvalWorld:
    world_dir = Path(world_dir)
    plan = load_floorplan(world_dir / "floorplan.json")
    aps = load_access_points(world_dir / "aps.json")
    measurements = load_measurements(world_dir / "measurements.csv")
    tp_meas = load_measurements(world_dir / "testpoints.csv")
    tp_rps = build_real_fingerprints(tp_meas, aps, NOT_DETECTED_DBM)
    from .simulator import TestPoint

    test_points = [TestPoint(rp.position, rp.fingerprint) for rp in tp_rps]
    return EvalWorld(plan=plan, aps=aps, measurements=measurements,
                     test_points=test_points, seed=seed)


def cmd_evaluate(args) -> int:
    world = _load_world_dir(args.world_dir, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    strategy = _strategy_from_args(args)
    model = ModelKind(args.model)
    n_total = len(world.measurements.rp_ids())
    area = world.area
    dr_grid = [ceil_scaled(rho * n_total) / area for rho in args.rho_grid]
    dv_grid = [dv for dv in args.dv_grid]

    prediction = run_prediction_analysis(
        world.measurements, world.plan, world.aps, args.rho_grid,
        [strategy], [model], world.sentinel_dbm)
    positioning, gain = run_positioning_sweep(
        world, dr_grid, dv_grid, strategy=strategy, model=model,
        placement=args.placement)
    dv_max = max(dv_grid)
    kest = run_kest_sweep(world, dr_grid, dv_max, alpha_range=args.alpha_range,
                          alpha_step=args.alpha_step, positioning=positioning)

    for name, report in (("prediction", prediction), ("positioning", positioning),
                         ("gain", gain), ("kest", kest)):
        emit_report(report, out / f"{name}.csv", fmt="csv")
        emit_report(report, out / f"{name}.json", fmt="json")

    failures = [c for c in prediction.cells if c.error]
    failures += [c for c in positioning.cells if c.error]
    for cell in failures:
        print(f"cell failed: {cell!r}", file=sys.stderr)

    ok_pred = [c for c in prediction.cells if not c.error]
    ok_pos = [c for c in positioning.cells if not c.error]
    if ok_pred:
        best = min(ok_pred, key=lambda c: c.mean_delta_db)
        print(f"prediction: mean delta {best.mean_delta_db:.2f} dB "
              f"(rho={best.rho}, {best.strategy}, {best.model})")
    if ok_pos:
        baseline = positioning.cell(dr_grid[-1], 0.0)
        print(f"positioning: mean error {baseline.mean_error_at_k_opt:.2f} m "
              f"at d_real={baseline.d_real:.4f}, d_virtual=0, k_opt={baseline.k_opt}")
    if gain.cells:
        headline = gain.gain(dr_grid[0], dv_max)
        print(f"gain: {headline:.2f} at d_real={dr_grid[0]:.4f}, d_virtual={dv_max}")
    kest_05 = [c for c in kest.cells if abs(c.alpha - 0.05) < 1e-9]
    if kest_05:
        worst = max(kest_05, key=lambda c: c.beta_m)
        print(f"k rule: worst beta at alpha=0.05 is {worst.beta_m:.3f} m "
              f"(d_real={worst.d_real:.4f})")

    all_cells = len(prediction.cells) + len(positioning.cells)
    if all_cells and len(failures) == all_cells:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="radioloc",
        description="RSS radiomap construction and WkNN indoor positioning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="generate a synthetic world and measurement campaign")
    p.add_argument("--template", default="spinv_like",
                   choices=["spinv_like", "twist_like", "custom"])
    p.add_argument("--custom-file", default=None)
    p.add_argument("--preset", default="controlled",
                   choices=["controlled", "crowdsourcing"])
    p.add_argument("--dr", type=float, default=None,
                   help="survey RP density (RPs/m^2); default: template full grid")
    p.add_argument("--tp-count", type=int, default=None)
    p.add_argument("--shadowing-sigma", type=float, default=3.0)
    p.add_argument("--mismatch-sigma", type=float, default=2.75)
    p.add_argument("--mismatch-corr", type=float, default=6.0)
    p.add_argument("--drift-sigma", type=float, default=1.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common],
                       help="calibrate path-loss parameters from measurements")
    p.add_argument("--measurements", required=True)
    p.add_argument("--floorplan", required=True)
    p.add_argument("--aps", required=True)
    p.add_argument("--strategy", default="environment",
                   choices=["environment", "per-ap", "no-fit"])
    p.add_argument("--model", default="mwmf", choices=["mwmf", "os"])
    p.add_argument("--params", default=None,
                   help="params JSON for the no-fit strategy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("build-radiomap", parents=[common],
                       help="assemble real + virtual fingerprints into a radiomap")
    p.add_argument("--measurements", required=True)
    p.add_argument("--floorplan", required=True)
    p.add_argument("--aps", required=True)
    p.add_argument("--fit", required=True, help="fit result JSON from the fit command")
    p.add_argument("--rho", type=float, default=1.0,
                   help="fraction of survey points kept as real RPs")
    p.add_argument("--dv", type=float, default=0.0, help="virtual RP density (RPs/m^2)")
    p.add_argument("--placement", default="grid", choices=["grid", "random"])
    p.add_argument("--rp-height", type=float, default=DEVICE_HEIGHT_M)
    p.add_argument("--sentinel", type=float, default=NOT_DETECTED_DBM)
    p.add_argument("--detection-floor", type=float, default=DETECTION_FLOOR_DBM)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_radiomap)

    p = sub.add_parser("locate", parents=[common],
                       help="estimate a target position from its fingerprint")
    p.add_argument("--radiomap", required=True)
    p.add_argument("--target", required=True, help="CSV with header ap_id,rss_dbm")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--k", type=int, default=None)
    group.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--order", type=float, default=2.0)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("evaluate", parents=[common],
                       help="run prediction, positioning, gain, and k-rule sweeps")
    p.add_argument("--world-dir", required=True,
                   help="directory written by the simulate command")
    p.add_argument("--strategy", default="environment",
                   choices=["environment", "per-ap", "no-fit"])
    p.add_argument("--params", default=None)
    p.add_argument("--model", default="mwmf", choices=["mwmf", "os"])
    p.add_argument("--placement", default="grid", choices=["grid", "random"])
    p.add_argument("--rho-grid", type=_float_list, default=list(DEFAULT_RHO_GRID))
    p.add_argument("--dv-grid", type=_float_list, default=list(DEFAULT_DV_GRID))
    p.add_argument("--alpha-range", type=_alpha_range, default=DEFAULT_ALPHA_RANGE,
                   metavar="MIN:MAX")
    p.add_argument("--alpha-step", type=float, default=0.01)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateFitError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Evaluation harness: prediction accuracy, positioning sweeps, gain, k-rule checks.

Three procedures are reproduced on a realized world (geometry, APs, survey
measurements, held-out test points):

* prediction analysis: for a grid of survey fractions rho, fit the model on
  ceil(rho * N) points and score |measured - predicted| at every survey point;
* positioning sweep: a full factorial over real-RP density, virtual-RP
  density, and k, reporting per-target errors and the gain of adding virtual
  fingerprints relative to the same real density without them;
* k-rule sweep: compare the density-derived k against the error-minimizing k
  over a grid of alpha values.

Reports are plain dataclasses serializable to CSV (one row per sweep cell) and
JSON (round-trippable).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateFitError, InputError, InsufficientDataError
from .fitting import FitResult, FitStrategy, MeasurementSet, fit
from .floorplan import Floorplan
from .ioutil import write_text_atomic
from .positioning import error_curves
from .propagation import AccessPoint, ModelKind, predict_rss_many
from .radiomap import (
    DETECTION_FLOOR_DBM,
    NOT_DETECTED_DBM,
    build_real_fingerprints,
    ceil_scaled,
    decimation_order,
    generate_virtual_fingerprints,
    place_virtual_rps,
)
from .simulator import (
    ScenarioPreset,
    TestPoint,
    WorldSpec,
    grid_rp_positions,
    make_world,
    simulate_campaign,
    template_info,
    template_test_positions,
)

_SWEEP_STREAM = 307


# ---------------------------------------------------------------------------
# Shared statistics helpers
# ---------------------------------------------------------------------------

def cdf_points(values: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative_fraction) pairs; last fraction is 1.0."""
    ordered = sorted(float(v) for v in values)
    n = len(ordered)
    return [(v, (i + 1) / n) for i, v in enumerate(ordered)]


def boxplot_stats(values: Sequence[float]) -> dict:
    """Min, quartiles, max, and 1.5*IQR outliers of a sample."""
    arr = np.asarray(values, dtype=float)
    p25, p50, p75 = (float(v) for v in np.percentile(arr, [25, 50, 75]))
    iqr = p75 - p25
    lo, hi = p25 - 1.5 * iqr, p75 + 1.5 * iqr
    return {
        "min": float(arr.min()),
        "p25": p25,
        "p50": p50,
        "p75": p75,
        "max": float(arr.max()),
        "outliers": [float(v) for v in arr[(arr < lo) | (arr > hi)]],
    }


# ---------------------------------------------------------------------------
# The realized world an evaluation runs against
# ---------------------------------------------------------------------------

@dataclass
class EvalWorld:
    """Everything the system under evaluation gets to see."""

    plan: Floorplan
    aps: list[AccessPoint]
    measurements: MeasurementSet
    test_points: list[TestPoint]
    sentinel_dbm: float = NOT_DETECTED_DBM
    detection_floor_dbm: float = DETECTION_FLOOR_DBM
    seed: int = 0

    @property
    def area(self) -> float:
        return self.plan.area


def build_world(template: str, seed: int, preset: ScenarioPreset | None = None,
                noise=None, n_test_points: int | None = None,
                ) -> tuple[EvalWorld, WorldSpec]:
    """Realize a template world and its full-density survey campaign."""
    world = make_world(template, seed, noise=noise)
    info = template_info(template)
    rp_positions = grid_rp_positions(world.plan, info.dr_max)
    tp_positions = template_test_positions(template, seed, world.plan, n_test_points)
    if preset is None:
        preset = ScenarioPreset.controlled()
    measurements, test_points = simulate_campaign(world, rp_positions, tp_positions, preset)
    return (
        EvalWorld(plan=world.plan, aps=world.aps, measurements=measurements,
                  test_points=test_points, sentinel_dbm=world.sentinel_dbm,
                  detection_floor_dbm=world.detection_floor_dbm, seed=world.seed),
        world,
    )


# ---------------------------------------------------------------------------
# Report dataclasses
# ---------------------------------------------------------------------------

@dataclass
class PredictionCell:
    rho: float
    strategy: str
    model: str
    n_rps_fit: int
    n_pairs: int
    mean_delta_db: float
    per_ap_mean_db: dict[str, float]
    per_ap_deltas: dict[str, list[float]]
    error: str | None = None


@dataclass
class PredictionReport:
    cells: list[PredictionCell] = field(default_factory=list)

    def mean_delta(self, rho: float, strategy: str, model: str) -> float:
        for cell in self.cells:
            if (cell.rho, cell.strategy, cell.model) == (rho, strategy, model):
                return cell.mean_delta_db
        raise KeyError(f"no prediction cell for rho={rho}, {strategy}, {model}")


@dataclass
class PositioningCell:
    d_real: float
    d_virtual: float
    n_real: int
    n_virtual: int
    k_values: list[int]
    mean_error_by_k: list[float]
    p25_by_k: list[float]
    p50_by_k: list[float]
    p75_by_k: list[float]
    min_by_k: list[float]
    max_by_k: list[float]
    k_opt: int
    errors_at_k_opt: list[float]
    error: str | None = None

    def mean_error_at(self, k: int) -> float:
        try:
            return self.mean_error_by_k[self.k_values.index(k)]
        except ValueError:
            raise KeyError(f"k={k} not evaluated in this cell") from None

    @property
    def mean_error_at_k_opt(self) -> float:
        return self.mean_error_at(self.k_opt)


@dataclass
class PositioningReport:
    strategy: str
    model: str
    placement: str
    cells: list[PositioningCell] = field(default_factory=list)

    def cell(self, d_real: float, d_virtual: float) -> PositioningCell:
        for c in self.cells:
            if c.d_real == d_real and c.d_virtual == d_virtual:
                return c
        raise KeyError(f"no cell for d_real={d_real}, d_virtual={d_virtual}")


@dataclass
class GainCell:
    d_real: float
    d_virtual: float
    k_baseline: int
    k_cell: int
    gain: float


@dataclass
class GainReport:
    policy: str
    cells: list[GainCell] = field(default_factory=list)

    def gain(self, d_real: float, d_virtual: float) -> float:
        for c in self.cells:
            if c.d_real == d_real and c.d_virtual == d_virtual:
                return c.gain
        raise KeyError(f"no gain cell for d_real={d_real}, d_virtual={d_virtual}")


@dataclass
class KestCell:
    d_real: float
    d_virtual: float
    alpha: float
    k_est: int
    k_opt: int
    mean_error_kest_m: float
    mean_error_kopt_m: float
    beta_m: float


@dataclass
class KestReport:
    cells: list[KestCell] = field(default_factory=list)

    def beta(self, d_real: float, alpha: float) -> float:
        for c in self.cells:
            if c.d_real == d_real and math.isclose(c.alpha, alpha):
                return c.beta_m
        raise KeyError(f"no k-rule cell for d_real={d_real}, alpha={alpha}")


# ---------------------------------------------------------------------------
# Prediction analysis
# ---------------------------------------------------------------------------

def run_prediction_analysis(meas: MeasurementSet, plan: Floorplan,
                            aps: list[AccessPoint],
                            rho_grid: Sequence[float],
                            strategies: Sequence[FitStrategy],
                            models: Sequence[ModelKind],
                            sentinel_dbm: float = NOT_DETECTED_DBM,
                            ) -> PredictionReport:
    """Score RSS prediction error over a grid of survey fractions.

    For each (rho, strategy, model): calibrate on ceil(rho * N) survey points
    chosen by farthest-point decimation, predict at every survey point, and
    collect |measured - predicted| over all pairs where the AP was detected.
    Fit failures are recorded in their cell instead of aborting the sweep.
    """
    if any(not 0.0 < rho <= 1.0 for rho in rho_grid):
        raise ValueError("rho grid values must lie in (0, 1]")
    rp_ids = meas.rp_ids()
    locations = meas.locations()
    averaged = meas.averaged()
    positions = np.array([[locations[r].x, locations[r].y, locations[r].z] for r in rp_ids])
    order = decimation_order(positions)
    all_locations = [locations[r] for r in rp_ids]

    report = PredictionReport()
    for rho in rho_grid:
        n_keep = ceil_scaled(rho * len(rp_ids))
        selected = {rp_ids[i] for i in order[:n_keep]}
        subset = meas.subset(selected)
        for strategy in strategies:
            for model in models:
                cell = PredictionCell(
                    rho=float(rho), strategy=strategy.kind.value, model=model.value,
                    n_rps_fit=n_keep, n_pairs=0, mean_delta_db=float("nan"),
                    per_ap_mean_db={}, per_ap_deltas={},
                )
                report.cells.append(cell)
                try:
                    result = fit(strategy, model, plan, aps, subset)
                except (DegenerateFitError, InsufficientDataError) as exc:
                    cell.error = str(exc)
                    continue
                per_ap_deltas: dict[str, list[float]] = {}
                for ap in aps:
                    params = result.params_for(ap.id)
                    predicted = predict_rss_many(model, params, plan, ap,
                                                 np.array([[p.x, p.y, p.z]
                                                           for p in all_locations]))
                    deltas = []
                    for rp_id, value in zip(rp_ids, predicted):
                        measured = averaged.get((rp_id, ap.id))
                        if measured is not None:
                            deltas.append(abs(measured - float(value)))
                    if deltas:
                        per_ap_deltas[ap.id] = deltas
                pooled = [d for deltas in per_ap_deltas.values() for d in deltas]
                cell.n_pairs = len(pooled)
                cell.mean_delta_db = float(np.mean(pooled)) if pooled else float("nan")
                cell.per_ap_deltas = per_ap_deltas
                cell.per_ap_mean_db = {ap_id: float(np.mean(d))
                                       for ap_id, d in per_ap_deltas.items()}
    return report


# ---------------------------------------------------------------------------
# Positioning sweep and virtualization gain
# ---------------------------------------------------------------------------

def _default_k_values(n_rps: int) -> list[int]:
    k_max = min(n_rps, max(15, ceil_scaled(0.25 * n_rps)))
    return list(range(1, k_max + 1))


def _evaluate_cell(world: EvalWorld, fit_result: FitResult, model: ModelKind,
                   real_rps, d_real: float, d_virtual: float,
                   placement: str, seed: int,
                   k_grid: Sequence[int] | None) -> PositioningCell:
    virtual_rps = []
    if d_virtual > 0:
        positions = place_virtual_rps(world.plan, d_virtual, placement, seed=seed)
        virtual_rps = generate_virtual_fingerprints(
            fit_result, model, world.plan, world.aps, positions,
            sentinel_dbm=world.sentinel_dbm,
            detection_floor_dbm=world.detection_floor_dbm)
    rps = list(real_rps) + virtual_rps
    rp_rss = np.array([rp.fingerprint.rss for rp in rps])
    rp_pos = np.array([[rp.position.x, rp.position.y, rp.position.z] for rp in rps])

    if k_grid is None:
        k_values = _default_k_values(len(rps))
    else:
        k_values = sorted({int(k) for k in k_grid if 1 <= int(k) <= len(rps)})
        if not k_values:
            raise ValueError("k grid has no feasible value for this cell")
    curves = error_curves(rp_rss, rp_pos, world.test_points, k_values[-1])
    means = curves.mean(axis=0)
    quartiles = np.percentile(curves, [25, 50, 75], axis=0)

    k_opt = min(k_values, key=lambda k: (means[k - 1], k))
    return PositioningCell(
        d_real=float(d_real), d_virtual=float(d_virtual),
        n_real=len(real_rps), n_virtual=len(virtual_rps),
        k_values=k_values,
        mean_error_by_k=[float(means[k - 1]) for k in k_values],
        p25_by_k=[float(quartiles[0, k - 1]) for k in k_values],
        p50_by_k=[float(quartiles[1, k - 1]) for k in k_values],
        p75_by_k=[float(quartiles[2, k - 1]) for k in k_values],
        min_by_k=[float(curves[:, k - 1].min()) for k in k_values],
        max_by_k=[float(curves[:, k - 1].max()) for k in k_values],
        k_opt=int(k_opt),
        errors_at_k_opt=[float(v) for v in curves[:, k_opt - 1]],
    )


def _failed_cell(d_real: float, d_virtual: float, n_real: int, message: str,
                 ) -> PositioningCell:
    return PositioningCell(
        d_real=float(d_real), d_virtual=float(d_virtual), n_real=n_real, n_virtual=0,
        k_values=[], mean_error_by_k=[], p25_by_k=[], p50_by_k=[], p75_by_k=[],
        min_by_k=[], max_by_k=[], k_opt=0, errors_at_k_opt=[], error=message,
    )


def run_positioning_sweep(world: EvalWorld, dr_grid: Sequence[float],
                          dv_grid: Sequence[float],
                          k_grid: Sequence[int] | None = None,
                          strategy: FitStrategy | None = None,
                          model: ModelKind = ModelKind.MWMF,
                          placement: str = "grid",
                          gain_fixed_k: int | None = None,
                          ) -> tuple[PositioningReport, GainReport]:
    """Full factorial sweep of positioning error over (d_real, d_virtual, k).

    Each d_real keeps the first ceil(d_real * area) survey points in
    farthest-point order, refits the model on them, and evaluates WkNN error
    at every requested virtual density (a d_virtual = 0 baseline is always
    computed; it anchors the gain). Gain uses each cell's own error-minimizing
    k unless ``gain_fixed_k`` pins a common k.
    """
    if not world.test_points:
        raise ValueError("positioning sweep needs test points")
    if strategy is None:
        strategy = FitStrategy.environment()

    rps_all = build_real_fingerprints(world.measurements, world.aps, world.sentinel_dbm)
    rp_ids = world.measurements.rp_ids()
    positions = np.array([[rp.position.x, rp.position.y, rp.position.z] for rp in rps_all])
    order = decimation_order(positions)
    area = world.area

    dv_values = sorted({float(dv) for dv in dv_grid} | {0.0})
    report = PositioningReport(strategy=strategy.kind.value, model=model.value,
                               placement=placement, cells=[])

    for i_dr, d_real in enumerate(dr_grid):
        n_real = int(math.floor(round(d_real * area, 9) + 0.5))
        n_real = max(1, min(n_real, len(rps_all)))
        keep = order[:n_real]
        real_rps = [rps_all[i] for i in keep]
        selected_ids = {rp_ids[i] for i in keep}
        try:
            fit_result = fit(strategy, model, world.plan, world.aps,
                             world.measurements.subset(selected_ids))
        except (DegenerateFitError, InsufficientDataError) as exc:
            for dv in dv_values:
                report.cells.append(_failed_cell(d_real, dv, n_real, str(exc)))
            continue
        for i_dv, dv in enumerate(dv_values):
            cell_seed = int(np.random.SeedSequence(
                [world.seed, _SWEEP_STREAM, i_dr, i_dv]).generate_state(1)[0])
            try:
                cell = _evaluate_cell(world, fit_result, model, real_rps,
                                      d_real, dv, placement, cell_seed, k_grid)
            except ValueError as exc:
                cell = _failed_cell(d_real, dv, n_real, str(exc))
            report.cells.append(cell)

    gain = GainReport(policy="per-cell-k-opt" if gain_fixed_k is None
                      else f"fixed-k:{gain_fixed_k}", cells=[])
    requested_dvs = sorted({float(dv) for dv in dv_grid if dv > 0})
    for d_real in dr_grid:
        try:
            baseline = report.cell(float(d_real), 0.0)
        except KeyError:
            continue
        if baseline.error:
            continue
        for dv in requested_dvs:
            cell = report.cell(float(d_real), dv)
            if cell.error:
                continue
            try:
                k_b = gain_fixed_k if gain_fixed_k is not None else baseline.k_opt
                k_c = gain_fixed_k if gain_fixed_k is not None else cell.k_opt
                value = baseline.mean_error_at(k_b) / cell.mean_error_at(k_c)
            except KeyError:
                continue
            gain.cells.append(GainCell(d_real=float(d_real), d_virtual=dv,
                                       k_baseline=int(k_b), k_cell=int(k_c),
                                       gain=float(value)))
    return report, gain


# ---------------------------------------------------------------------------
# k-rule validity sweep
# ---------------------------------------------------------------------------

def run_kest_sweep(world: EvalWorld, dr_grid: Sequence[float], dv_max: float,
                   alpha_range: tuple[float, float] = (0.01, 0.25),
                   alpha_step: float = 0.01,
                   strategy: FitStrategy | None = None,
                   model: ModelKind = ModelKind.MWMF,
                   placement: str = "grid",
                   positioning: PositioningReport | None = None) -> KestReport:
    """Excess error of the density-derived k over the best k, across alpha.

    For each d_real at the maximum virtual density, beta(alpha) is the mean
    positioning error at k = ceil(alpha * N) minus the error at the sweep's
    best k. A precomputed PositioningReport covering (dr_grid, dv_max) may be
    passed to avoid recomputation.
    """
    a_min, a_max = alpha_range
    if not 0.0 < a_min <= a_max:
        raise ValueError("alpha range must satisfy 0 < min <= max")
    if dv_max <= 0:
        raise ValueError("k-rule sweep needs a positive virtual density")
    alphas = []
    i = 0
    while True:
        alpha = round(a_min + i * alpha_step, 10)
        if alpha > a_max + 1e-12:
            break
        alphas.append(alpha)
        i += 1

    if positioning is None:
        positioning, _ = run_positioning_sweep(world, dr_grid, [dv_max],
                                               strategy=strategy, model=model,
                                               placement=placement)

    report = KestReport()
    for d_real in dr_grid:
        cell = positioning.cell(float(d_real), float(dv_max))
        if cell.error:
            continue
        n_total = cell.n_real + cell.n_virtual
        for alpha in alphas:
            k_rule = ceil_scaled(alpha * n_total)
            k_rule = min(k_rule, cell.k_values[-1])
            err_rule = cell.mean_error_at(k_rule)
            err_opt = cell.mean_error_at_k_opt
            report.cells.append(KestCell(
                d_real=float(d_real), d_virtual=float(dv_max), alpha=float(alpha),
                k_est=int(k_rule), k_opt=int(cell.k_opt),
                mean_error_kest_m=float(err_rule), mean_error_kopt_m=float(err_opt),
                beta_m=float(err_rule - err_opt),
            ))
    return report


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------

_POSITIONING_CSV = ["d_real", "d_virtual", "k", "strategy", "model",
                    "mean_error_m", "p25", "p50", "p75", "min", "max", "gain"]


def _positioning_csv_rows(report: PositioningReport) -> list[list]:
    rows = []
    baselines = {c.d_real: c for c in report.cells if c.d_virtual == 0.0 and not c.error}
    for cell in report.cells:
        if cell.error:
            continue
        baseline = baselines.get(cell.d_real)
        for idx, k in enumerate(cell.k_values):
            gain = ""
            if cell.d_virtual > 0 and baseline is not None and k in baseline.k_values:
                gain = repr(baseline.mean_error_at(k) / cell.mean_error_by_k[idx])
            rows.append([repr(cell.d_real), repr(cell.d_virtual), k,
                         report.strategy, report.model,
                         repr(cell.mean_error_by_k[idx]), repr(cell.p25_by_k[idx]),
                         repr(cell.p50_by_k[idx]), repr(cell.p75_by_k[idx]),
                         repr(cell.min_by_k[idx]), repr(cell.max_by_k[idx]), gain])
    return rows


def _report_csv(report) -> str:
    import csv as _csv
    import io

    buf = io.StringIO()
    writer = _csv.writer(buf)
    if isinstance(report, PositioningReport):
        writer.writerow(_POSITIONING_CSV)
        writer.writerows(_positioning_csv_rows(report))
    elif isinstance(report, PredictionReport):
        writer.writerow(["rho", "strategy", "model", "n_rps_fit", "n_pairs",
                         "mean_delta_db", "error"])
        for c in report.cells:
            writer.writerow([repr(c.rho), c.strategy, c.model, c.n_rps_fit, c.n_pairs,
                             repr(c.mean_delta_db), c.error or ""])
    elif isinstance(report, GainReport):
        writer.writerow(["d_real", "d_virtual", "k_baseline", "k_cell", "gain"])
        for c in report.cells:
            writer.writerow([repr(c.d_real), repr(c.d_virtual), c.k_baseline,
                             c.k_cell, repr(c.gain)])
    elif isinstance(report, KestReport):
        writer.writerow(["d_real", "d_virtual", "alpha", "k_est", "k_opt",
                         "mean_error_kest_m", "mean_error_kopt_m", "beta_m"])
        for c in report.cells:
            writer.writerow([repr(c.d_real), repr(c.d_virtual), repr(c.alpha),
                             c.k_est, c.k_opt, repr(c.mean_error_kest_m),
                             repr(c.mean_error_kopt_m), repr(c.beta_m)])
    else:
        raise TypeError(f"unknown report type {type(report).__name__}")
    return buf.getvalue()


_REPORT_TYPES = {
    "prediction": (PredictionReport, PredictionCell),
    "positioning": (PositioningReport, PositioningCell),
    "gain": (GainReport, GainCell),
    "kest": (KestReport, KestCell),
}


def _report_json(report) -> str:
    for name, (report_cls, _) in _REPORT_TYPES.items():
        if isinstance(report, report_cls):
            doc = asdict(report)
            doc["type"] = name
            if isinstance(report, PositioningReport):
                for cell, cell_doc in zip(report.cells, doc["cells"]):
                    if not cell.error:
                        cell_doc["cdf_at_k_opt"] = cdf_points(cell.errors_at_k_opt)
                        cell_doc["boxplot_at_k_opt"] = boxplot_stats(cell.errors_at_k_opt)
            if isinstance(report, PredictionReport):
                for cell, cell_doc in zip(report.cells, doc["cells"]):
                    if not cell.error:
                        cell_doc["per_ap_cdf"] = {
                            ap: cdf_points(d) for ap, d in cell.per_ap_deltas.items()}
            return json.dumps(doc, indent=2) + "\n"
    raise TypeError(f"unknown report type {type(report).__name__}")


def emit_report(report, path: str | Path, fmt: str = "json") -> None:
    """Write a report to disk as CSV (one row per sweep cell) or JSON."""
    if fmt == "csv":
        text = _report_csv(report)
    elif fmt == "json":
        text = _report_json(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        write_text_atomic(path, text)
    except OSError as exc:
        raise InputError(f"cannot write report to {path}: {exc}") from exc


def load_report(path: str | Path):
    """Re-parse a JSON report emitted by emit_report into an equal report object."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read report file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"report file {path} is not valid JSON: {exc}") from exc
    kind = doc.pop("type", None)
    if kind not in _REPORT_TYPES:
        raise InputError(f"report file {path} has unknown type {kind!r}")
    report_cls, cell_cls = _REPORT_TYPES[kind]
    cell_fields = set(cell_cls.__dataclass_fields__)
    cells = [cell_cls(**{k: v for k, v in item.items() if k in cell_fields})
             for item in doc.pop("cells", [])]
    top_fields = {k: v for k, v in doc.items()
                  if k in report_cls.__dataclass_fields__ and k != "cells"}
    return report_cls(cells=cells, **top_fields)

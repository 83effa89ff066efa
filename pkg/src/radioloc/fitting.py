"""Least-squares calibration of path-loss parameters from an RSS survey.

With the 1 m reference loss pinned, the received power is linear in the
unknowns: gamma multiplies a 10*log10(d) regressor, the constant loss is an
intercept, and each obstacle (family, type) pair contributes its crossing
count as a regressor. Calibration is therefore ordinary linear least squares,
solved either pooled over every AP (environment fitting) or independently per
AP (specific-AP fitting). Scans are averaged per (point, AP) pair first and
not-detected entries are dropped, never imputed.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DegenerateFitError, InputError, InsufficientDataError
from .floorplan import Floorplan, ObstacleKey, Point3, crossing_counts_batch
from .ioutil import write_text_atomic
from .propagation import (
    AccessPoint,
    ModelKind,
    PropagationParams,
    params_from_dict,
    params_to_dict,
    predict_rss_many,
)

MEASUREMENT_COLUMNS = ["rp_id", "x", "y", "z", "ap_id", "rss_dbm", "scan_index"]
NOT_DETECTED_TOKEN = "ND"


@dataclass(frozen=True)
class MeasurementRecord:
    """One scan of one AP at one survey point; rss_dbm is None when not detected."""

    rp_id: str
    location: Point3
    ap_id: str
    rss_dbm: float | None
    scan_index: int

    def __post_init__(self):
        if self.rss_dbm is not None and not (-120.0 <= self.rss_dbm <= 0.0):
            raise ValueError(f"rss_dbm {self.rss_dbm} outside [-120, 0]")


class MeasurementSet:
    """A survey: raw per-scan RSS observations keyed by (point, AP, scan)."""

    def __init__(self, records: list[MeasurementRecord]):
        if not records:
            raise ValueError("measurement set is empty")
        self.records = list(records)
        scan_counts: dict[tuple[str, str], int] = {}
        for rec in self.records:
            key = (rec.rp_id, rec.ap_id)
            scan_counts[key] = scan_counts.get(key, 0) + 1
        self.q = max(scan_counts.values())

    def rp_ids(self) -> list[str]:
        """Survey point ids in first-appearance order."""
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.rp_id, None)
        return list(seen)

    def ap_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for rec in self.records:
            seen.setdefault(rec.ap_id, None)
        return list(seen)

    def locations(self) -> dict[str, Point3]:
        locs: dict[str, Point3] = {}
        for rec in self.records:
            prev = locs.setdefault(rec.rp_id, rec.location)
            if prev != rec.location:
                raise ValueError(f"point {rec.rp_id!r} has inconsistent coordinates")
        return locs

    def averaged(self) -> dict[tuple[str, str], float]:
        """Mean detected RSS per (rp_id, ap_id); pairs never detected are absent."""
        sums: dict[tuple[str, str], tuple[float, int]] = {}
        for rec in self.records:
            if rec.rss_dbm is None:
                continue
            key = (rec.rp_id, rec.ap_id)
            total, count = sums.get(key, (0.0, 0))
            sums[key] = (total + rec.rss_dbm, count + 1)
        return {key: total / count for key, (total, count) in sums.items()}

    def subset(self, rp_ids: set[str]) -> "MeasurementSet":
        kept = [rec for rec in self.records if rec.rp_id in rp_ids]
        if not kept:
            raise ValueError("subset selects no measurements")
        return MeasurementSet(kept)


class StrategyKind(str, Enum):
    ENVIRONMENT = "environment"
    PER_AP = "per-ap"
    NO_FIT = "no-fit"


@dataclass(frozen=True)
class FitStrategy:
    """How measurements are pooled to estimate parameters; no-fit carries fixed params."""

    kind: StrategyKind
    no_fit_params: PropagationParams | None = None

    def __post_init__(self):
        if self.kind is StrategyKind.NO_FIT and self.no_fit_params is None:
            raise ValueError("no-fit strategy requires a complete parameter set")

    @classmethod
    def environment(cls) -> "FitStrategy":
        return cls(StrategyKind.ENVIRONMENT)

    @classmethod
    def per_ap(cls) -> "FitStrategy":
        return cls(StrategyKind.PER_AP)

    @classmethod
    def no_fit(cls, params: PropagationParams) -> "FitStrategy":
        return cls(StrategyKind.NO_FIT, no_fit_params=params)


@dataclass
class FitResult:
    """Calibrated parameters per AP plus the fit's pooled residual statistics.

    Environment fitting maps every AP id to the same parameter instance.
    """

    params_by_ap: dict[str, PropagationParams]
    residual_rms_db: float
    m_used: int
    model: ModelKind
    strategy: StrategyKind

    def params_for(self, ap_id: str) -> PropagationParams:
        try:
            return self.params_by_ap[ap_id]
        except KeyError:
            raise KeyError(f"no fitted parameters for AP {ap_id!r}") from None


@dataclass
class _Sample:
    ap: AccessPoint
    rss_dbm: float
    log_term: float  # 10 * log10(d)
    counts: tuple[int, ...]  # aligned to the plan's obstacle keys


def _collect_samples(
    plan: Floorplan, aps: list[AccessPoint], meas: MeasurementSet
) -> tuple[list[_Sample], list[ObstacleKey]]:
    ap_by_id = {ap.id: ap for ap in aps}
    unknown = set(meas.ap_ids()) - set(ap_by_id)
    if unknown:
        raise ValueError(f"measurements reference unknown APs: {sorted(unknown)}")

    keys = plan.obstacle_keys()
    locations = meas.locations()
    averaged = meas.averaged()

    by_ap: dict[str, list[tuple[str, float]]] = {}
    for (rp_id, ap_id), rss in averaged.items():
        by_ap.setdefault(ap_id, []).append((rp_id, rss))

    samples: list[_Sample] = []
    skipped_floor = 0
    for ap_id in sorted(by_ap):
        ap = ap_by_id[ap_id]
        entries = sorted(by_ap[ap_id])
        pts = np.array([[locations[rp].x, locations[rp].y, locations[rp].z]
                        for rp, _ in entries])
        delta = pts - ap.position.as_array()
        dists = np.sqrt(np.sum(delta * delta, axis=1))
        counts, floors = crossing_counts_batch(plan, ap.position, pts)
        for i, (rp_id, rss) in enumerate(entries):
            if dists[i] <= 0:
                raise ValueError(f"point {rp_id!r} coincides with AP {ap_id!r}")
            if floors[i] > 0:
                # The floor term is not part of the fitted set; cross-floor
                # samples cannot be attributed and are excluded.
                skipped_floor += 1
                continue
            samples.append(_Sample(
                ap=ap,
                rss_dbm=rss,
                log_term=10.0 * math.log10(dists[i]),
                counts=tuple(int(counts[key][i]) for key in keys),
            ))
    if skipped_floor:
        warnings.warn(f"excluded {skipped_floor} cross-floor samples from the fit",
                      stacklevel=3)
    return samples, keys


def _solve(samples: list[_Sample], keys: list[ObstacleKey], model: ModelKind,
           scope: str, l0_db: float) -> tuple[PropagationParams, np.ndarray]:
    """Solve one least-squares system; returns (params, per-sample residuals)."""
    y = np.array([s.ap.eirp_dbm - l0_db - s.rss_dbm for s in samples])
    if model is ModelKind.ONE_SLOPE:
        design = np.array([[s.log_term] for s in samples])
        used_keys: list[ObstacleKey] = []
    else:
        counts = np.array([s.counts for s in samples], dtype=float).reshape(len(samples),
                                                                            len(keys))
        # Obstacle types never crossed by any sample are unidentifiable; they
        # are excluded from the solve and their loss reported as zero.
        observed = [j for j in range(len(keys)) if counts[:, j].any()]
        if len(observed) < len(keys):
            missing = [keys[j] for j in range(len(keys)) if j not in observed]
            warnings.warn(f"{scope}: no sample crosses {missing}; "
                          "their losses are unconstrained and set to 0",
                          stacklevel=3)
        used_keys = [keys[j] for j in observed]
        design = np.column_stack([
            np.array([s.log_term for s in samples]),
            np.ones(len(samples)),
            counts[:, observed],
        ])

    n_params = design.shape[1]
    if len(samples) < n_params:
        raise InsufficientDataError(
            f"{scope}: {len(samples)} samples for {n_params} parameters")
    solution, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < n_params:
        raise DegenerateFitError(scope)

    if model is ModelKind.ONE_SLOPE:
        params = PropagationParams(l0_db=l0_db, gamma=float(solution[0]), lc_db=0.0)
    else:
        loss_2d = {key: 0.0 for key in keys}
        loss_2d.update({key: float(v) for key, v in zip(used_keys, solution[2:])})
        if any(v < 0 for v in loss_2d.values()):
            warnings.warn(f"{scope}: fitted obstacle losses include negative values",
                          stacklevel=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # range warning already issued above
            params = PropagationParams(l0_db=l0_db, gamma=float(solution[0]),
                                       lc_db=float(solution[1]), loss_2d=loss_2d)
    return params, design @ solution - y


def fit(strategy: FitStrategy, model: ModelKind, plan: Floorplan,
        aps: list[AccessPoint], meas: MeasurementSet,
        l0_db: float | None = None) -> FitResult:
    """Estimate propagation parameters from scan-averaged measurements.

    The reference loss is pinned (free-space 40.22 dB unless overridden) and
    excluded from the solved set; a free intercept would be collinear with the
    constant loss.

    Cost: one QR-based solve of an (M x p) system, O(p * M^2) flops on the M
    pooled samples; per-AP fitting solves one such system per AP on its own
    samples.
    """
    if l0_db is None:
        l0_db = PropagationParams().l0_db
    samples, keys = _collect_samples(plan, aps, meas)

    if strategy.kind is StrategyKind.NO_FIT:
        params = strategy.no_fit_params
        residuals = []
        for s in samples:
            predicted = s.ap.eirp_dbm - (
                params.l0_db + params.gamma * s.log_term
                + (0.0 if model is ModelKind.ONE_SLOPE else
                   params.lc_db + sum(n * params.loss_2d.get(k, 0.0)
                                      for k, n in zip(keys, s.counts)))
            )
            residuals.append(predicted - s.rss_dbm)
        rms = float(np.sqrt(np.mean(np.square(residuals)))) if residuals else 0.0
        return FitResult(params_by_ap={ap.id: params for ap in aps},
                         residual_rms_db=rms, m_used=len(samples),
                         model=model, strategy=strategy.kind)

    if strategy.kind is StrategyKind.ENVIRONMENT:
        params, residuals = _solve(samples, keys, model, "environment", l0_db)
        return FitResult(params_by_ap={ap.id: params for ap in aps},
                         residual_rms_db=float(np.sqrt(np.mean(residuals ** 2))),
                         m_used=len(samples), model=model, strategy=strategy.kind)

    # Per-AP fitting: one independent system per AP that has samples.
    params_by_ap: dict[str, PropagationParams] = {}
    all_residuals: list[np.ndarray] = []
    m_used = 0
    for ap in aps:
        ap_samples = [s for s in samples if s.ap.id == ap.id]
        if not ap_samples:
            continue
        params, residuals = _solve(ap_samples, keys, model, ap.id, l0_db)
        params_by_ap[ap.id] = params
        all_residuals.append(residuals)
        m_used += len(ap_samples)
    if not params_by_ap:
        raise InsufficientDataError("no AP has any detected sample")
    pooled = np.concatenate(all_residuals)
    return FitResult(params_by_ap=params_by_ap,
                     residual_rms_db=float(np.sqrt(np.mean(pooled ** 2))),
                     m_used=m_used, model=model, strategy=strategy.kind)


def predict_for_measurements(
    result: FitResult, model: ModelKind, plan: Floorplan,
    aps: list[AccessPoint], locations: list[Point3],
) -> dict[tuple[str, Point3], float]:
    """Predicted RSS for every (AP, location) pair, using each AP's fitted params."""
    predictions: dict[tuple[str, Point3], float] = {}
    if not locations:
        return predictions
    pts = np.array([[p.x, p.y, p.z] for p in locations])
    for ap in aps:
        params = result.params_for(ap.id)
        values = predict_rss_many(model, params, plan, ap, pts)
        for loc, value in zip(locations, values):
            predictions[(ap.id, loc)] = float(value)
    return predictions


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def save_measurements(meas: MeasurementSet, path: str | Path) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(MEASUREMENT_COLUMNS)
    for rec in meas.records:
        rss = NOT_DETECTED_TOKEN if rec.rss_dbm is None else repr(rec.rss_dbm)
        writer.writerow([rec.rp_id, repr(rec.location.x), repr(rec.location.y),
                         repr(rec.location.z), rec.ap_id, rss, rec.scan_index])
    write_text_atomic(path, buf.getvalue())


def load_measurements(path: str | Path) -> MeasurementSet:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MEASUREMENT_COLUMNS:
                raise InputError(
                    f"{path}: expected header {','.join(MEASUREMENT_COLUMNS)}")
            records = []
            for row in reader:
                if not row:
                    continue
                if len(row) != len(MEASUREMENT_COLUMNS):
                    raise InputError(f"{path}: malformed row {row!r}")
                rp_id, x, y, z, ap_id, rss, scan = row
                records.append(MeasurementRecord(
                    rp_id=rp_id,
                    location=Point3(float(x), float(y), float(z)),
                    ap_id=ap_id,
                    rss_dbm=None if rss == NOT_DETECTED_TOKEN else float(rss),
                    scan_index=int(scan),
                ))
    except OSError as exc:
        raise InputError(f"cannot read measurement file {path}: {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if not records:
        raise InputError(f"{path}: no measurement rows")
    return MeasurementSet(records)


def fit_result_to_dict(result: FitResult) -> dict:
    doc = {
        "strategy": result.strategy.value,
        "model": result.model.value,
        "residual_rms_db": result.residual_rms_db,
        "m_used": result.m_used,
    }
    shared = list(result.params_by_ap.values())
    if shared and all(p is shared[0] for p in shared):
        doc["params"] = params_to_dict(result.model, shared[0])
        doc["ap_ids"] = list(result.params_by_ap)
    else:
        doc["params_by_ap"] = {ap_id: params_to_dict(result.model, p)
                               for ap_id, p in result.params_by_ap.items()}
    return doc


def fit_result_from_dict(doc: dict) -> FitResult:
    try:
        model = ModelKind(doc["model"])
        strategy = StrategyKind(doc["strategy"])
        if "params" in doc:
            _, params = params_from_dict(doc["params"])
            params_by_ap = {ap_id: params for ap_id in doc["ap_ids"]}
        else:
            params_by_ap = {}
            for ap_id, item in doc["params_by_ap"].items():
                _, params_by_ap[ap_id] = params_from_dict(item)
        return FitResult(params_by_ap=params_by_ap,
                         residual_rms_db=float(doc["residual_rms_db"]),
                         m_used=int(doc["m_used"]), model=model, strategy=strategy)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed fit result document: {exc}") from exc


def save_fit_result(result: FitResult, path: str | Path) -> None:
    write_text_atomic(path, json.dumps(fit_result_to_dict(result), indent=2) + "\n")


def load_fit_result(path: str | Path) -> FitResult:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read fit result file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"fit result file {path} is not valid JSON: {exc}") from exc
    return fit_result_from_dict(doc)

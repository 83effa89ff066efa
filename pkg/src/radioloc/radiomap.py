"""Fingerprint database construction: real reference points, decimation, virtual synthesis.

A fingerprint is the L-vector of RSS values aligned to the deployment's AP
list. Real reference points average survey scans; virtual ones are model
predictions on a chosen layout. Undetected (or below-floor) entries hold a
numeric sentinel so that fingerprint distances stay finite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InputError
from .fitting import FitResult, MeasurementSet
from .floorplan import Floorplan, Point3, lattice_positions
from .ioutil import write_text_atomic
from .propagation import (
    AccessPoint,
    ModelKind,
    aps_from_list,
    aps_to_list,
    predict_rss_many,
)

NOT_DETECTED_DBM = -100.0
DETECTION_FLOOR_DBM = -95.0
DEVICE_HEIGHT_M = 1.2


class RpKind(str, Enum):
    REAL = "real"
    VIRTUAL = "virtual"


class Fingerprint:
    """An L-vector of dBm values; not-detected entries carry the sentinel value."""

    __slots__ = ("rss",)

    def __init__(self, rss):
        values = np.asarray(rss, dtype=float)
        if values.ndim != 1:
            raise ValueError("fingerprint must be a 1-D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("fingerprint values must be finite")
        if np.any(values < -120.0) or np.any(values > 0.0):
            raise ValueError("fingerprint values must lie within [-120, 0] dBm")
        self.rss = values

    def __len__(self) -> int:
        return self.rss.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, Fingerprint) and np.array_equal(self.rss, other.rss)

    def __repr__(self) -> str:
        return f"Fingerprint({self.rss.tolist()})"


@dataclass(frozen=True)
class ReferencePoint:
    position: Point3
    fingerprint: Fingerprint
    kind: RpKind


class Radiomap:
    """The fingerprint database: APs plus real and/or virtual reference points.

    ``area_m2`` is needed to express RP counts as spatial densities; it may be
    omitted when only counts matter (e.g. a map loaded for bare positioning).
    Treated as immutable once built; positioning reads it concurrently without
    locking.
    """

    def __init__(self, aps: list[AccessPoint], rps: list[ReferencePoint],
                 area_m2: float | None = None,
                 sentinel_dbm: float = NOT_DETECTED_DBM):
        if not aps:
            raise ValueError("radiomap needs at least one AP")
        for rp in rps:
            if len(rp.fingerprint) != len(aps):
                raise ValueError("fingerprint length must equal the number of APs")
        if area_m2 is not None and area_m2 <= 0:
            raise ValueError("area must be positive")
        self.aps = list(aps)
        self.rps = list(rps)
        self.area_m2 = area_m2
        self.sentinel_dbm = sentinel_dbm

    def __len__(self) -> int:
        return len(self.rps)

    @property
    def n_real(self) -> int:
        return sum(1 for rp in self.rps if rp.kind is RpKind.REAL)

    @property
    def n_virtual(self) -> int:
        return sum(1 for rp in self.rps if rp.kind is RpKind.VIRTUAL)

    def _require_area(self) -> float:
        if self.area_m2 is None:
            raise ValueError("radiomap has no area; densities are undefined")
        return self.area_m2

    @property
    def d_real(self) -> float:
        return self.n_real / self._require_area()

    @property
    def d_virtual(self) -> float:
        return self.n_virtual / self._require_area()

    def rss_matrix(self) -> np.ndarray:
        return np.array([rp.fingerprint.rss for rp in self.rps])

    def positions_matrix(self) -> np.ndarray:
        return np.array([[rp.position.x, rp.position.y, rp.position.z] for rp in self.rps])


def build_real_fingerprints(meas: MeasurementSet, aps: list[AccessPoint],
                            sentinel_dbm: float = NOT_DETECTED_DBM,
                            ) -> list[ReferencePoint]:
    """Average the survey into one real fingerprint per point.

    Each entry is the arithmetic mean of that AP's detected scans; an AP never
    detected at the point gets the sentinel.
    """
    averaged = meas.averaged()
    locations = meas.locations()
    points = []
    for rp_id in meas.rp_ids():
        values = [averaged.get((rp_id, ap.id), sentinel_dbm) for ap in aps]
        points.append(ReferencePoint(
            position=locations[rp_id],
            fingerprint=Fingerprint(values),
            kind=RpKind.REAL,
        ))
    return points


def ceil_scaled(value: float) -> int:
    """Ceiling after rounding away float fuzz, so exact integers stay put."""
    return int(math.ceil(round(value, 9)))


def decimation_order(positions: np.ndarray) -> list[int]:
    """Deterministic farthest-point ordering of positions ((n, 3) array).

    Starts at the point closest to the centroid of the positions' bounding
    box, then repeatedly appends the point farthest from all selected ones.
    Distance ties resolve to the lowest index.
    """
    pts = np.asarray(positions, dtype=float)
    n = pts.shape[0]
    centroid = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    first = int(np.argmin(np.linalg.norm(pts - centroid, axis=1)))
    order = [first]
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(min_dist))
        order.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return order


def select_rps(all_rps: list[ReferencePoint], rho: float) -> list[ReferencePoint]:
    """Keep ceil(rho * N) reference points by farthest-point decimation.

    Selections nest: the kept set for a smaller rho is a subset of the kept
    set for any larger rho.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    n_keep = ceil_scaled(rho * len(all_rps))
    positions = np.array([[rp.position.x, rp.position.y, rp.position.z] for rp in all_rps])
    order = decimation_order(positions)
    return [all_rps[i] for i in order[:n_keep]]


def place_virtual_rps(plan: Floorplan, d_virtual: float, placement: str = "grid",
                      seed: int | None = None, z_m: float = DEVICE_HEIGHT_M,
                      ) -> list[Point3]:
    """Positions for ceil(d_virtual * area) virtual reference points.

    ``placement`` is "grid" (near-uniform lattice at cell centers) or "random"
    (uniform i.i.d. inside the bounds, seeded).
    """
    if d_virtual <= 0:
        raise ValueError("virtual RP density must be positive")
    n = ceil_scaled(d_virtual * plan.area)
    bounds = plan.bounds
    if placement == "grid":
        return [Point3(x, y, z_m) for x, y in lattice_positions(bounds, n)]
    if placement == "random":
        if seed is None:
            raise ValueError("random placement requires a seed")
        rng = np.random.default_rng(seed)
        xs = rng.uniform(bounds.min_x, bounds.max_x, n)
        ys = rng.uniform(bounds.min_y, bounds.max_y, n)
        return [Point3(float(x), float(y), z_m) for x, y in zip(xs, ys)]
    raise ValueError(f"unknown placement {placement!r}")


def generate_virtual_fingerprints(
    fit_result: FitResult, model: ModelKind, plan: Floorplan,
    aps: list[AccessPoint], positions: list[Point3],
    sentinel_dbm: float = NOT_DETECTED_DBM,
    detection_floor_dbm: float = DETECTION_FLOOR_DBM,
) -> list[ReferencePoint]:
    """Predict one virtual fingerprint per position with each AP's fitted params.

    Predictions below the detection floor become the sentinel, mirroring how
    real non-detections are recorded.

    Cost: dominated by obstruction counting, O(n_obstacles * n_positions) per
    AP, i.e. O(n_obstacles * n_positions * L) for the full map.
    """
    if not positions:
        return []
    pts = np.array([[p.x, p.y, p.z] for p in positions])
    columns = []
    for ap in aps:
        params = fit_result.params_for(ap.id)
        values = predict_rss_many(model, params, plan, ap, pts)
        columns.append(np.where(values < detection_floor_dbm, sentinel_dbm, values))
    matrix = np.column_stack(columns)
    # A strong fit can predict above 0 dBm only for degenerate geometry; clip
    # to the fingerprint's representable range.
    matrix = np.clip(matrix, -120.0, 0.0)
    return [
        ReferencePoint(position=pos, fingerprint=Fingerprint(matrix[i]), kind=RpKind.VIRTUAL)
        for i, pos in enumerate(positions)
    ]


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def radiomap_to_dict(rmap: Radiomap) -> dict:
    doc = {
        "aps": aps_to_list(rmap.aps),
        "sentinel_dbm": rmap.sentinel_dbm,
        "rps": [
            {
                "x": rp.position.x,
                "y": rp.position.y,
                "z": rp.position.z,
                "kind": rp.kind.value,
                "rss": [None if v == rmap.sentinel_dbm else v
                        for v in rp.fingerprint.rss.tolist()],
            }
            for rp in rmap.rps
        ],
    }
    if rmap.area_m2 is not None:
        doc["area_m2"] = rmap.area_m2
    return doc


def radiomap_from_dict(doc: dict) -> Radiomap:
    try:
        aps = aps_from_list(doc["aps"])
        sentinel = float(doc.get("sentinel_dbm", NOT_DETECTED_DBM))
        rps = [
            ReferencePoint(
                position=Point3(float(item["x"]), float(item["y"]), float(item["z"])),
                fingerprint=Fingerprint([sentinel if v is None else float(v)
                                         for v in item["rss"]]),
                kind=RpKind(item.get("kind", "real")),
            )
            for item in doc.get("rps", [])
        ]
        area = doc.get("area_m2")
        return Radiomap(aps, rps, area_m2=None if area is None else float(area),
                        sentinel_dbm=sentinel)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed radiomap document: {exc}") from exc


def save_radiomap(rmap: Radiomap, path: str | Path) -> None:
    write_text_atomic(path, json.dumps(radiomap_to_dict(rmap), indent=2) + "\n")


def load_radiomap(path: str | Path) -> Radiomap:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read radiomap file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"radiomap file {path} is not valid JSON: {exc}") from exc
    return radiomap_from_dict(doc)

"""Path-loss models and RSS prediction.

Two deterministic models are supported: a one-slope distance law

    PL_os(d) = l0 + 10 * gamma * log10(d)      [dB]

and a multi-wall multi-floor variant that adds, on top of PL_os, a constant
loss, a per-crossing loss for every 2D obstacle the link traverses, and an
empirical floor term

    A = lc + sum_{family,type} N * loss + Nf^((Nf+2)/(Nf+1) - b) * lf   [dB].

Received power is the AP's EIRP minus the path loss.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InputError
from .floorplan import (
    Floorplan,
    ObstacleFamily,
    ObstacleKey,
    ObstructionCount,
    Point3,
    count_obstructions,
    crossing_counts_batch,
    link_distance,
)
from .ioutil import write_text_atomic

# Free-space reference loss at d = 1 m for the 2.45 GHz band.
FREE_SPACE_L0_DB = 40.22
DEFAULT_FLOOR_LOSS_DB = 18.0
DEFAULT_FLOOR_B = 0.46

WALL_KEY: ObstacleKey = (ObstacleFamily.WALL, 1)
DOOR_KEY: ObstacleKey = (ObstacleFamily.DOOR, 1)


class ModelKind(str, Enum):
    MWMF = "mwmf"
    ONE_SLOPE = "os"


@dataclass(frozen=True)
class PropagationParams:
    """Deterministic path-loss parameters.

    ``loss_2d`` maps (family, type_index) to a per-crossing loss in dB. The
    one-slope model reads only ``l0_db`` and ``gamma``. Fitted instances may
    carry negative losses (the calibration is unconstrained); a warning is
    emitted when that happens.
    """

    l0_db: float = FREE_SPACE_L0_DB
    gamma: float = 2.0
    lc_db: float = 0.0
    loss_2d: dict[ObstacleKey, float] = field(default_factory=dict)
    lf_db: float = DEFAULT_FLOOR_LOSS_DB
    b: float = DEFAULT_FLOOR_B

    def __post_init__(self):
        values = [self.l0_db, self.gamma, self.lc_db, self.lf_db, self.b]
        values += list(self.loss_2d.values())
        if not all(math.isfinite(v) for v in values):
            raise ValueError("propagation parameters must be finite")
        if self.l0_db <= 0:
            raise ValueError("reference loss l0_db must be positive")
        if self.gamma <= 0 or self.lf_db < 0 or any(v < 0 for v in self.loss_2d.values()):
            warnings.warn("propagation parameters outside their nominal range "
                          "(gamma <= 0 or negative losses)", stacklevel=2)

    @classmethod
    def simple(cls, gamma: float, lc_db: float = 0.0, wall_db: float = 0.0,
               door_db: float = 0.0, l0_db: float = FREE_SPACE_L0_DB,
               lf_db: float = DEFAULT_FLOOR_LOSS_DB, b: float = DEFAULT_FLOOR_B,
               ) -> "PropagationParams":
        """Build params with single-type wall and door losses."""
        return cls(l0_db=l0_db, gamma=gamma, lc_db=lc_db,
                   loss_2d={WALL_KEY: wall_db, DOOR_KEY: door_db}, lf_db=lf_db, b=b)

    @property
    def wall_loss_db(self) -> float:
        return self.loss_2d.get(WALL_KEY, 0.0)

    @property
    def door_loss_db(self) -> float:
        return self.loss_2d.get(DOOR_KEY, 0.0)


@dataclass(frozen=True)
class AccessPoint:
    """A WiFi AP at a known position emitting a known EIRP."""

    id: str
    position: Point3
    eirp_dbm: float = 20.0


def path_loss_os(params: PropagationParams, distance_m: float) -> float:
    """One-slope path loss l0 + 10*gamma*log10(d), in dB."""
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return params.l0_db + 10.0 * params.gamma * math.log10(distance_m)


def floor_term_db(params: PropagationParams, n_floors: int) -> float:
    """Empirical floor-crossing loss; zero when no floor plane is crossed."""
    if n_floors <= 0:
        return 0.0
    exponent = (n_floors + 2) / (n_floors + 1) - params.b
    return (n_floors ** exponent) * params.lf_db


def additional_loss(params: PropagationParams, obstructions: ObstructionCount) -> float:
    """Extra loss from obstructing objects and floors on a link, in dB.

    Obstacle types without a configured loss contribute nothing.
    """
    extra = params.lc_db
    for key, n in obstructions.counts.items():
        if n:
            extra += n * params.loss_2d.get(key, 0.0)
    return extra + floor_term_db(params, obstructions.floors_crossed)


def path_loss(model: ModelKind, params: PropagationParams, plan: Floorplan,
              tx: Point3, rx: Point3) -> float:
    """Total link path loss in dB for the selected model."""
    pl = path_loss_os(params, link_distance(tx, rx))
    if model is ModelKind.MWMF:
        pl += additional_loss(params, count_obstructions(plan, tx, rx))
    return pl


def predict_rss(model: ModelKind, params: PropagationParams, plan: Floorplan,
                ap: AccessPoint, rx: Point3) -> float:
    """Predicted received power at rx, in dBm (EIRP minus path loss).

    The value is not clamped to any detection floor here; flooring happens
    when fingerprints are assembled.
    """
    return ap.eirp_dbm - path_loss(model, params, plan, ap.position, rx)


def predict_rss_many(model: ModelKind, params: PropagationParams, plan: Floorplan,
                     ap: AccessPoint, positions: np.ndarray | list[Point3]) -> np.ndarray:
    """Vectorized predict_rss over many receiver positions ((n, 3) array or Point3 list)."""
    if isinstance(positions, np.ndarray):
        pts = np.asarray(positions, dtype=float)
    else:
        pts = np.array([[p.x, p.y, p.z] for p in positions], dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("positions must have shape (n, 3)")

    delta = pts - ap.position.as_array()
    d = np.sqrt(np.sum(delta * delta, axis=1))
    if np.any(d <= 0):
        raise ValueError("a receiver position coincides with the AP")
    pl = params.l0_db + 10.0 * params.gamma * np.log10(d)

    if model is ModelKind.MWMF:
        counts, floors = crossing_counts_batch(plan, ap.position, pts)
        extra = np.full(pts.shape[0], params.lc_db)
        for key, arr in counts.items():
            loss = params.loss_2d.get(key, 0.0)
            if loss:
                extra += arr * loss
        for nf in np.unique(floors):
            if nf > 0:
                extra[floors == nf] += floor_term_db(params, int(nf))
        pl = pl + extra

    return ap.eirp_dbm - pl


# ---------------------------------------------------------------------------
# JSON serialization (params and AP files)
# ---------------------------------------------------------------------------

def params_to_dict(model: ModelKind, params: PropagationParams) -> dict:
    extra = set(params.loss_2d) - {WALL_KEY, DOOR_KEY}
    if extra:
        raise ValueError(f"params file format carries wall/door losses only, got {sorted(extra)}")
    return {
        "model": model.value,
        "l0_db": params.l0_db,
        "gamma": params.gamma,
        "lc_db": params.lc_db,
        "losses": {"wall": params.wall_loss_db, "door": params.door_loss_db},
        "lf_db": params.lf_db,
        "b": params.b,
    }


def params_from_dict(doc: dict) -> tuple[ModelKind, PropagationParams]:
    try:
        losses = doc.get("losses", {})
        params = PropagationParams.simple(
            gamma=float(doc["gamma"]),
            lc_db=float(doc.get("lc_db", 0.0)),
            wall_db=float(losses.get("wall", 0.0)),
            door_db=float(losses.get("door", 0.0)),
            l0_db=float(doc.get("l0_db", FREE_SPACE_L0_DB)),
            lf_db=float(doc.get("lf_db", DEFAULT_FLOOR_LOSS_DB)),
            b=float(doc.get("b", DEFAULT_FLOOR_B)),
        )
        return ModelKind(doc.get("model", ModelKind.MWMF.value)), params
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed params document: {exc}") from exc


def save_params(model: ModelKind, params: PropagationParams, path: str | Path) -> None:
    write_text_atomic(path, json.dumps(params_to_dict(model, params), indent=2) + "\n")


def load_params(path: str | Path) -> tuple[ModelKind, PropagationParams]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read params file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"params file {path} is not valid JSON: {exc}") from exc
    return params_from_dict(doc)


def aps_to_list(aps: list[AccessPoint]) -> list[dict]:
    return [
        {"id": ap.id, "x": ap.position.x, "y": ap.position.y, "z": ap.position.z,
         "eirp_dbm": ap.eirp_dbm}
        for ap in aps
    ]


def aps_from_list(items: list[dict]) -> list[AccessPoint]:
    try:
        aps = [
            AccessPoint(
                id=str(item["id"]),
                position=Point3(float(item["x"]), float(item["y"]), float(item["z"])),
                eirp_dbm=float(item.get("eirp_dbm", 20.0)),
            )
            for item in items
        ]
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed AP list: {exc}") from exc
    ids = [ap.id for ap in aps]
    if len(set(ids)) != len(ids):
        raise InputError("AP ids must be unique within a deployment")
    return aps


def save_access_points(aps: list[AccessPoint], path: str | Path) -> None:
    write_text_atomic(path, json.dumps(aps_to_list(aps), indent=2) + "\n")


def load_access_points(path: str | Path) -> list[AccessPoint]:
    path = Path(path)
    try:
        items = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read AP file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"AP file {path} is not valid JSON: {exc}") from exc
    if not isinstance(items, list):
        raise InputError(f"AP file {path} must contain a JSON list")
    return aps_from_list(items)

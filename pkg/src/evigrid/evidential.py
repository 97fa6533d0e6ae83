"""Dempster-Shafer cell states for measurement grids and dynamic grid maps.

Two frames of discernment are used and nothing more general:

* Measurement grids live on {F, O} (free, occupied).  A cell carries the
  mass triplet (b_F, b_O, b_FO) with b_FO the explicit unknown mass and
  b_F + b_O + b_FO = 1.  The vacuous cell (0, 0, 1) is the identity of
  Dempster's combination rule.

* Dynamic grid maps live on {F, D, S} (free, dynamic, static) where a
  cell can never be both free and static: the hypothesis {F, S} is
  excluded by construction, leaving six focal elements
  {F}, {D}, {S}, {F,D}, {D,S} and the full frame {F,D,S}.

Grids store these masses as stacked float64 numpy planes; the scalar
dataclasses below are the per-cell value types used at API boundaries
and in tests.  All operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import FullConflictError

# Tolerance for the unit-sum mass invariant.
MASS_TOL = 1e-9

# Plane order for {F, D, S} mass stacks.  {F, S} is never represented.
DGM_HYPOTHESES = ("F", "D", "S", "FD", "DS", "FDS")
_HYP_SETS = (
    frozenset("F"),
    frozenset("D"),
    frozenset("S"),
    frozenset("FD"),
    frozenset("DS"),
    frozenset("FDS"),
)
_HYP_INDEX = {h: i for i, h in enumerate(_HYP_SETS)}


class CellClass(IntEnum):
    """Hard cell label; values double as the on-disk class plane encoding."""

    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


@dataclass(frozen=True)
class MeasurementCell:
    """Masses over {F, O}: free, occupied, and unknown ({F, O})."""

    b_f: float
    b_o: float
    b_fo: float

    def __post_init__(self) -> None:
        for m in (self.b_f, self.b_o, self.b_fo):
            if not -MASS_TOL <= m <= 1.0 + MASS_TOL:
                raise ValueError(f"mass outside [0, 1]: {m}")
        total = self.b_f + self.b_o + self.b_fo
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses must sum to 1, got {total}")

    @staticmethod
    def vacuous() -> "MeasurementCell":
        return MeasurementCell(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class DgmCell:
    """Masses over the admissible power set of {F, D, S} plus velocity stats.

    ``v_mean`` is the cell velocity estimate in m/s, ``v_cov`` its 2x2
    covariance; both are meaningful only when ``v_valid`` is set.
    """

    m_f: float
    m_d: float
    m_s: float
    m_fd: float
    m_ds: float
    m_fds: float
    v_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    v_cov: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    v_valid: bool = False

    def __post_init__(self) -> None:
        for m in self.masses():
            if not -MASS_TOL <= m <= 1.0 + MASS_TOL:
                raise ValueError(f"mass outside [0, 1]: {m}")
        total = sum(self.masses())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses must sum to 1, got {total}")
        if self.v_valid:
            cov = np.asarray(self.v_cov, dtype=float)
            if cov.shape != (2, 2) or abs(cov[0, 1] - cov[1, 0]) > 1e-9:
                raise ValueError("v_cov must be symmetric 2x2")
            if np.linalg.eigvalsh(cov).min() < -1e-9:
                raise ValueError("v_cov must be positive semi-definite")

    def masses(self) -> tuple[float, ...]:
        return (self.m_f, self.m_d, self.m_s, self.m_fd, self.m_ds, self.m_fds)

    @staticmethod
    def vacuous() -> "DgmCell":
        return DgmCell(0.0, 0.0, 0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class RgbColor:
    r: float
    g: float
    b: float

    def __post_init__(self) -> None:
        for c in (self.r, self.g, self.b):
            if not -MASS_TOL <= c <= 1.0 + MASS_TOL:
                raise ValueError(f"channel outside [0, 1]: {c}")


def dempster_combine(a: MeasurementCell, b: MeasurementCell) -> MeasurementCell:
    """Combine two {F, O} mass functions with Dempster's rule.

    Conflict ``K = a.b_f * b.b_o + a.b_o * b.b_f`` is renormalised away.
    Raises :class:`FullConflictError` for K = 1 (two fully contradicting
    dogmatic cells); callers that want a fallback conventionally
    substitute the vacuous cell.
    """
    k = a.b_f * b.b_o + a.b_o * b.b_f
    if k >= 1.0 - 1e-12:
        raise FullConflictError("full conflict: K = 1")
    norm = 1.0 / (1.0 - k)
    b_f = (a.b_f * b.b_f + a.b_f * b.b_fo + a.b_fo * b.b_f) * norm
    b_o = (a.b_o * b.b_o + a.b_o * b.b_fo + a.b_fo * b.b_o) * norm
    b_fo = a.b_fo * b.b_fo * norm
    # Re-normalise to bound floating-point drift over long fusion chains.
    total = b_f + b_o + b_fo
    return MeasurementCell(b_f / total, b_o / total, b_fo / total)


def combine_measurement_planes(
    a: np.ndarray, b: np.ndarray, conflict_eps: float = 1e-12
) -> np.ndarray:
    """Elementwise Dempster combination of two (..., 3) mass stacks.

    Cells in full conflict fall back to the vacuous cell (the default
    caller policy for grid-level merging; the scalar op raises instead).
    """
    af, ao, au = a[..., 0], a[..., 1], a[..., 2]
    bf, bo, bu = b[..., 0], b[..., 1], b[..., 2]
    k = af * bo + ao * bf
    full = k >= 1.0 - conflict_eps
    norm = 1.0 / np.where(full, 1.0, 1.0 - k)
    out = np.stack(
        [
            (af * bf + af * bu + au * bf) * norm,
            (ao * bo + ao * bu + au * bo) * norm,
            au * bu * norm,
        ],
        axis=-1,
    )
    out[full] = (0.0, 0.0, 1.0)
    out /= out.sum(axis=-1, keepdims=True)
    return out


def dgm_to_measurement(c: DgmCell) -> MeasurementCell:
    """Project a {F, D, S} cell onto the measurement frame {F, O}.

    Occupied collects everything known to be non-free ({D}, {S}, {D,S});
    free is {F} alone; the remainder ({F,D} and the full frame) folds
    into the unknown mass.
    """
    b_o = c.m_d + c.m_s + c.m_ds
    b_f = c.m_f
    b_fo = 1.0 - b_f - b_o
    return MeasurementCell(b_f, b_o, max(b_fo, 0.0))


def dgm_to_measurement_planes(m: np.ndarray) -> np.ndarray:
    """Plane version of :func:`dgm_to_measurement` for (..., 6) stacks."""
    b_o = m[..., 1] + m[..., 2] + m[..., 4]
    b_f = m[..., 0]
    b_fo = np.clip(1.0 - b_f - b_o, 0.0, 1.0)
    return np.stack([b_f, b_o, b_fo], axis=-1)


def classify(c: MeasurementCell) -> CellClass:
    """Hard label by largest mass; ties resolve UNKNOWN > OCCUPIED > FREE."""
    best = max(c.b_fo, c.b_o, c.b_f)
    if c.b_fo >= best:
        return CellClass.UNKNOWN
    if c.b_o >= best:
        return CellClass.OCCUPIED
    return CellClass.FREE


def classify_planes(masses: np.ndarray) -> np.ndarray:
    """Vectorised :func:`classify` on a (..., 3) stack of (b_F, b_O, b_FO).

    Returns a uint8 array of :class:`CellClass` values.
    """
    # Tie-break priority UNKNOWN > OCCUPIED > FREE: argmax over the
    # reversed stack picks the first maximum in that priority order.
    order = np.stack([masses[..., 2], masses[..., 1], masses[..., 0]], axis=-1)
    idx = np.argmax(order, axis=-1)
    lookup = np.array(
        [CellClass.UNKNOWN, CellClass.OCCUPIED, CellClass.FREE], dtype=np.uint8
    )
    return lookup[idx]


def dgm_cell_color(c: DgmCell) -> RgbColor:
    """Map a {F, D, S} cell onto the red/green/blue display convention.

    Each channel is one minus the total mass of hypotheses that exclude
    the channel's state, so pure static is red, pure free green, pure
    dynamic blue, and full ignorance white.
    """
    r, g, b = dgm_color_planes(np.asarray(c.masses(), dtype=float))
    return RgbColor(float(r), float(g), float(b))


def dgm_color_planes(m: np.ndarray) -> np.ndarray:
    """Vectorised color mapping for (..., 6) mass stacks; returns (..., 3)."""
    m_f, m_d, m_s, m_fd, m_ds, _ = (m[..., i] for i in range(6))
    r = 1.0 - (m_f + m_d + m_fd)  # hypotheses without S
    g = 1.0 - (m_d + m_s + m_ds)  # hypotheses without F
    b = 1.0 - (m_f + m_s)  # hypotheses without D
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def combine_dgm_planes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise Dempster combination on the {F, D, S} frame.

    ``a`` and ``b`` are (..., 6) stacks in :data:`DGM_HYPOTHESES` order.
    Conflict is renormalised; cells in full conflict fall back to full
    ignorance.  {F, S} can never arise: no pair of admissible hypotheses
    intersects to it.
    """
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=float)
    conflict = np.zeros(out.shape[:-1], dtype=float)
    for i, hi in enumerate(_HYP_SETS):
        for j, hj in enumerate(_HYP_SETS):
            prod = a[..., i] * b[..., j]
            inter = hi & hj
            if not inter:
                conflict += prod
            else:
                out[..., _HYP_INDEX[inter]] += prod
    full = conflict >= 1.0 - 1e-12
    out /= np.where(full, 1.0, 1.0 - conflict)[..., None]
    out[full] = (0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    out /= out.sum(axis=-1, keepdims=True)
    return out

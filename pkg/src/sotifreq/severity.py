"""Collision severity under a position error in the perceived gap.

The deceleration scenario: the front vehicle brakes at ``a_max_brake``
from t=0; the rear vehicle, believing the gap is ``d_min`` while it is
really ``d_min - error``, accelerates at ``a_max_accel`` for ``rho`` and
then brakes at ``a_min_brake``. Severity is the closing speed at first
contact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import KMH, kernels
from .behavior import RssParams, rss_min_distance
from .errors import AlwaysExceeds, InvalidErrorRegionFour, NeverExceeds

SEG_FRONT_STOPPED = 1
SEG_MUTUAL_BRAKING = 2
SEG_REACTION = 3
SEG_INVALID = 4

SEGMENT_SYMBOLS = {1: "①", 2: "②", 3: "③", 4: "④"}


class _NoCollision:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __bool__(self):
        return False

    def __repr__(self):
        return "NoCollision"


NoCollision = _NoCollision()


@dataclass(frozen=True)
class SeverityConfig:
    v_r: float
    v_f: float
    params: RssParams = field(default_factory=RssParams)
    dt: float = 0.01
    dv_max: float = 50.0 * KMH

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.dv_max > 0:
            raise ValueError("dv_max must be positive")
        if self.v_r < 0 or self.v_f < 0:
            raise ValueError("speeds must be non-negative")

    @property
    def d_min(self) -> float:
        return rss_min_distance(self.v_r, self.v_f, self.params)


@dataclass(frozen=True)
class CollisionOutcome:
    collided: bool
    delta_v: float
    segment: int
    t: float


def simulate_collision(cfg: SeverityConfig, pos_error: float) -> CollisionOutcome:
    if pos_error < 0:
        raise ValueError("position error must be non-negative")
    d_a = cfg.d_min - pos_error
    if d_a <= 0:
        raise InvalidErrorRegionFour(
            f"error {pos_error:.3f} m >= d_min {cfg.d_min:.3f} m: no reaction is required")
    p = cfg.params
    phase, dv, t = kernels.delta_v_sim(cfg.v_r, cfg.v_f, d_a, p.rho, p.a_max_accel,
                                       p.a_min_brake, p.a_max_brake, cfg.dt)
    if phase == kernels.NO_COLLISION:
        return CollisionOutcome(False, 0.0, SEG_FRONT_STOPPED, t)
    return CollisionOutcome(True, float(dv), int(phase), float(t))


def simulate_delta_v(cfg: SeverityConfig, pos_error: float):
    """Closing speed (m/s) at first contact, or ``NoCollision``."""
    out = simulate_collision(cfg, pos_error)
    return out.delta_v if out.collided else NoCollision


@dataclass(frozen=True)
class SeverityPoint:
    error: float
    delta_v: float | None  # None only in the invalid region
    segment: int
    collided: bool


@dataclass
class SeverityCurve:
    points: list[SeverityPoint]

    def __post_init__(self):
        errs = [p.error for p in self.points]
        if any(b <= a for a, b in zip(errs, errs[1:])):
            raise ValueError("severity curve errors must be strictly increasing")

    @property
    def errors(self) -> np.ndarray:
        return np.array([p.error for p in self.points])

    @property
    def delta_v(self) -> np.ndarray:
        return np.array([np.nan if p.delta_v is None else p.delta_v for p in self.points])

    @property
    def segments(self) -> list[int]:
        return [p.segment for p in self.points]

    def segment_order(self) -> list[int]:
        """Distinct segment tags in order of first appearance among collisions."""
        seen: list[int] = []
        for p in self.points:
            if (p.collided or p.segment == SEG_INVALID) and p.segment not in seen:
                seen.append(p.segment)
        return seen

    def rows(self):
        for p in self.points:
            yield {
                "error_m": p.error,
                "delta_v_kmh": "" if p.delta_v is None else p.delta_v / KMH,
                "segment": p.segment,
                "collision": int(p.collided),
            }


def _point(cfg: SeverityConfig, e: float) -> SeverityPoint:
    if e >= cfg.d_min:
        return SeverityPoint(float(e), None, SEG_INVALID, False)
    out = simulate_collision(cfg, e)
    return SeverityPoint(float(e), out.delta_v, out.segment, out.collided)


def severity_curve(cfg: SeverityConfig, error_min: float, error_max: float,
                   n_points: int) -> SeverityCurve:
    if not (0 <= error_min < error_max):
        raise ValueError("need 0 <= error_min < error_max")
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    errs = np.linspace(error_min, error_max, n_points)
    return SeverityCurve([_point(cfg, float(e)) for e in errs])


def _exceeds(cfg, e) -> bool:
    out = simulate_collision(cfg, e)
    return out.collided and out.delta_v > cfg.dv_max


def max_allowable_position_error(cfg: SeverityConfig, tol: float = 0.01,
                                 scan_step: float = 0.1) -> float:
    """Largest error whose collision stays at or below ``dv_max``.

    A coarse scan brackets the first exceedance (checking monotonicity on
    the front-stopped branch on the way), then bisection narrows the
    bracket to ``tol``.
    """
    d_min = cfg.d_min
    hi_valid = math.nextafter(d_min, 0.0)
    if _exceeds(cfg, 0.0):
        raise AlwaysExceeds("delta-v exceeds the limit even without position error")
    grid = np.arange(0.0, hi_valid, scan_step)
    grid = np.append(grid, hi_valid) if grid[-1] < hi_valid else grid
    lo, hi = 0.0, None
    last_dv = 0.0
    for e in grid[1:]:
        out = simulate_collision(cfg, float(e))
        if out.segment == SEG_FRONT_STOPPED and out.collided:
            if out.delta_v + 1e-9 < last_dv:
                raise ValueError("delta-v is not monotone on the front-stopped branch")
            last_dv = out.delta_v
        if out.collided and out.delta_v > cfg.dv_max:
            hi = float(e)
            break
        lo = float(e)
    if hi is None:
        raise NeverExceeds("delta-v stays below the limit over the whole valid error range")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _exceeds(cfg, mid):
            hi = mid
        else:
            lo = mid
    return lo


def velocity_error_to_position_error(e_v: float, v_f: float, p: RssParams | None = None) -> float:
    """Shrinkage of the safe distance when the front speed is overestimated by ``e_v``."""
    p = p or RssParams()
    if e_v < 0 or v_f < 0:
        raise ValueError("e_v and v_f must be non-negative")
    return ((v_f + e_v) ** 2 - v_f ** 2) / (2.0 * p.a_max_brake)


def max_allowable_velocity_error(pos_budget: float, v_f_max: float, p: RssParams | None = None) -> float:
    p = p or RssParams()
    if not pos_budget > 0:
        raise ValueError("position budget must be positive")
    if v_f_max < 0:
        raise ValueError("v_f_max must be non-negative")
    return math.sqrt(v_f_max ** 2 + 2.0 * p.a_max_brake * pos_budget) - v_f_max


def velocity_error_curve(v_f_values, e_v_max: float, n_points: int = 51,
                         p: RssParams | None = None) -> list[dict]:
    """Rows (v_f, e_v, position error) for plotting, all in SI units."""
    rows = []
    for v_f in v_f_values:
        for e_v in np.linspace(0.0, e_v_max, n_points):
            rows.append({"v_f": float(v_f), "e_v": float(e_v),
                         "position_error": velocity_error_to_position_error(float(e_v), float(v_f), p)})
    return rows

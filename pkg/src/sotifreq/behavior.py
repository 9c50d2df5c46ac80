"""Intended behavior models (RSS, FSM, CC Driver) and scenario replay.

Each model is a pure function from a :class:`PolicyState` to a demanded
longitudinal acceleration. The replay loop owns the little memory the
models need (the instant a threat was first perceived) and applies the
actuator limits: jerk ``j_max`` and magnitude ``a_max`` (in g).

Conventions: ``x_ego`` is the ego front bumper and ``x_obj`` the object's
rear bumper, both measured along the ego heading, so ``gap = x_obj - x_ego``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import G, kernels
from .errors import ConfigError, DanglingReference, UnknownModel
from .scenarios import CutInScenario, FollowingScenario
from .trajectory import TrackSet

_EPS_T = 1e-9


class Model(str, enum.Enum):
    RSS = "RSS"
    FSM = "FSM"
    CC = "CC"

    @classmethod
    def parse(cls, value) -> "Model":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise UnknownModel(f"unknown behavior model {value!r}") from None


def _check_positive(obj):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
            raise ConfigError(f"{type(obj).__name__}.{f.name} must be positive, got {v!r}")


@dataclass(frozen=True)
class RssParams:
    rho: float = 0.75
    a_max_accel: float = 3.0
    a_min_brake: float = 6.0
    a_max_brake: float = 6.0
    j_max: float = 12.65
    a_max: float = 0.774  # g

    def __post_init__(self):
        _check_positive(self)
        if self.a_min_brake > self.a_max_brake:
            raise ConfigError("RSS requires a_min_brake <= a_max_brake")


@dataclass(frozen=True)
class FsmParams:
    tau: float = 0.75
    b_ego_comf: float = 3.0
    b_ego_max: float = 6.0
    b_cutin_max: float = 7.0
    j_max: float = 12.65
    a_max: float = 0.774  # g

    def __post_init__(self):
        _check_positive(self)
        if self.b_ego_comf > self.b_ego_max:
            raise ConfigError("FSM requires b_ego_comf <= b_ego_max")


@dataclass(frozen=True)
class CcParams:
    perception_time: float = 0.4
    reaction_time: float = 0.75
    b_ego_max: float = 0.774 * G
    margin: float = 1.0
    j_max: float = 12.65
    a_max: float = 0.774  # g

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class BehaviorParams:
    rss: RssParams = field(default_factory=RssParams)
    fsm: FsmParams = field(default_factory=FsmParams)
    cc: CcParams = field(default_factory=CcParams)

    def for_model(self, model):
        model = Model.parse(model)
        return {Model.RSS: self.rss, Model.FSM: self.fsm, Model.CC: self.cc}[model]

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorParams":
        kinds = {"RSS": RssParams, "FSM": FsmParams, "CC": CcParams}
        kw = {}
        for key, kind in kinds.items():
            sec = d.get(key, d.get(key.lower()))
            if sec is None:
                continue
            unknown = set(sec) - {f.name for f in fields(kind)}
            if unknown:
                raise ConfigError(f"unknown {key} parameter(s): {sorted(unknown)}")
            kw[key.lower()] = kind(**{k: float(v) for k, v in sec.items()})
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "BehaviorParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"RSS": asdict(self.rss), "FSM": asdict(self.fsm), "CC": asdict(self.cc)}


@dataclass(frozen=True)
class PolicyState:
    x_ego: float
    v_ego: float
    x_obj: float
    v_obj: float
    obj_present: bool = True
    t: float = 0.0
    a_obj: float = 0.0
    t_alert: float | None = None
    t_brake: float | None = None

    def __post_init__(self):
        if self.v_ego < 0 or self.v_obj < 0:
            raise ValueError("speeds must be non-negative")

    @property
    def gap(self) -> float:
        return self.x_obj - self.x_ego


def rss_min_distance(v_r: float, v_f: float, p: RssParams | None = None) -> float:
    """RSS longitudinal minimum safe distance in meters."""
    p = p or RssParams()
    if v_r < 0 or v_f < 0:
        raise ValueError("speeds must be non-negative")
    return kernels.rss_min_distance(v_r, v_f, p.rho, p.a_max_accel, p.a_min_brake, p.a_max_brake)


def _stop_profile(t, v0, decel, delay):
    """Position travelled by a vehicle cruising for ``delay`` then braking to a stop."""
    if t <= delay:
        return v0 * t, v0
    if decel <= 0:
        return v0 * t, v0
    tb = min(t - delay, v0 / decel)
    return v0 * delay + v0 * tb - 0.5 * decel * tb * tb, v0 - decel * tb


def required_gap(v_ego, b_ego, v_front, b_front, delay=0.0) -> float:
    """Smallest gap for which the ego stops clear of the front vehicle.

    Ego cruises for ``delay`` and then brakes at ``b_ego``; the front vehicle
    brakes at ``b_front`` from now (``b_front <= 0`` means it holds speed).
    """
    t_e = delay + (v_ego / b_ego if b_ego > 0 else math.inf)
    t_f = v_front / b_front if b_front > 0 else math.inf
    marks = sorted({0.0, delay, *(t for t in (t_e, t_f) if math.isfinite(t))})

    def rel(t):
        xe, ve = _stop_profile(t, v_ego, b_ego, delay)
        xf, vf = _stop_profile(t, v_front, max(b_front, 0.0), 0.0)
        return xe - xf, ve - vf

    best = 0.0
    for ta, tb in zip(marks, marks[1:]):
        da, ra = rel(ta)
        db, rb = rel(tb)
        best = max(best, da, db)
        if ra > 0 > rb:
            tr = ta + (tb - ta) * ra / (ra - rb)
            best = max(best, rel(tr)[0])
    best = max(best, rel(marks[-1])[0])
    return best


def fsm_margins(v_ego, v_obj, p: FsmParams) -> tuple[float, float]:
    """(d_comf, d_unsafe) stopping margins of the graded-braking FSM variant."""
    d_comf = required_gap(v_ego, p.b_ego_comf, v_obj, p.b_cutin_max, p.tau)
    d_unsafe = required_gap(v_ego, p.b_ego_max, v_obj, p.b_cutin_max, p.tau)
    return d_comf, d_unsafe


def fsm_braking_demand(gap, v_ego, v_obj, p: FsmParams) -> float:
    """Fraction u in [0, 1] of the comfortable-to-maximum braking range."""
    d_comf, d_unsafe = fsm_margins(v_ego, v_obj, p)
    if d_comf - d_unsafe <= 0:
        return 1.0 if gap < d_comf else 0.0
    return min(max((d_comf - gap) / (d_comf - d_unsafe), 0.0), 1.0)


def cc_stopping_need(s: PolicyState, p: CcParams) -> float:
    """Gap needed to stop behind the object if full braking starts now.

    The jerk-limited onset is replaced by its equivalent pure delay
    ``b/(2 j)``; the front keeps its currently observed deceleration.
    """
    onset = p.b_ego_max / (2.0 * p.j_max)
    return required_gap(s.v_ego, p.b_ego_max, s.v_obj, max(-s.a_obj, 0.0), onset) + p.margin


def threat_perceived(model, s: PolicyState, params) -> bool:
    """Whether the model would start its reaction clock in this state."""
    model = Model.parse(model)
    if not s.obj_present:
        return False
    if model is Model.RSS:
        return s.gap <= rss_min_distance(s.v_ego, s.v_obj, params)
    if model is Model.FSM:
        return s.gap < fsm_margins(s.v_ego, s.v_obj, params)[0]
    return True


def _reacted(s: PolicyState, delay: float) -> bool:
    onset = s.t_alert if s.t_alert is not None else s.t
    return s.t - onset >= delay - _EPS_T


def policy_step(model, s: PolicyState, params) -> float:
    """Demanded longitudinal acceleration (m/s^2) before actuator limits.

    A state without ``t_alert`` is taken to perceive its threat right now,
    so the reaction delay has not yet elapsed.
    """
    model = Model.parse(model)
    if not s.obj_present:
        return 0.0
    if model is Model.RSS:
        if s.gap <= rss_min_distance(s.v_ego, s.v_obj, params) and _reacted(s, params.rho):
            return -params.a_min_brake
        return 0.0
    if model is Model.FSM:
        d_comf, _ = fsm_margins(s.v_ego, s.v_obj, params)
        if s.gap < d_comf and _reacted(s, params.tau):
            u = fsm_braking_demand(s.gap, s.v_ego, s.v_obj, params)
            return -(params.b_ego_comf + u * (params.b_ego_max - params.b_ego_comf))
        return 0.0
    if s.v_ego <= s.v_obj:
        return 0.0
    if s.t_brake is not None:
        return -params.b_ego_max
    if (s.t_alert is not None and _reacted(s, params.perception_time + params.reaction_time)
            and s.gap < cc_stopping_need(s, params)):
        return -params.b_ego_max
    return 0.0


def limit_command(a_demand: float, a_prev: float, dt: float, j_max: float, a_max_g: float) -> float:
    jerk_step = j_max * dt
    a = min(max(a_demand, a_prev - jerk_step), a_prev + jerk_step)
    a_lim = a_max_g * G
    return min(max(a, -a_lim), a_lim)


def integrate(x: float, v: float, a: float, dt: float) -> tuple[float, float]:
    """Constant-acceleration step with a standstill clamp."""
    v_next = v + a * dt
    if v_next < 0.0:
        if a < 0.0:
            x += v * v / (-2.0 * a)
        return x, 0.0
    return x + v * dt + 0.5 * a * dt * dt, v_next


@dataclass
class SimTrace:
    t: np.ndarray
    x_ego: np.ndarray
    v_ego: np.ndarray
    x_obj: np.ndarray
    v_obj: np.ndarray
    a_cmd: np.ndarray
    obj_present: np.ndarray
    collision: bool
    collision_dv: float | None
    dt: float

    @property
    def gap(self) -> np.ndarray:
        return self.x_obj - self.x_ego

    @property
    def min_gap(self) -> float:
        g = self.gap[self.obj_present]
        return float(g.min()) if len(g) else math.inf

    def rows(self):
        for i in range(len(self.t)):
            yield {
                "t": float(self.t[i]), "x_ego": float(self.x_ego[i]), "v_ego": float(self.v_ego[i]),
                "x_obj": float(self.x_obj[i]), "v_obj": float(self.v_obj[i]),
                "a_cmd": float(self.a_cmd[i]),
            }


@dataclass(frozen=True)
class ReplayInput:
    """Everything the replay loop needs, already on the simulation time grid."""

    x_obj: np.ndarray
    v_obj: np.ndarray
    a_obj: np.ndarray
    present: np.ndarray
    x_ego0: float
    v_ego0: float
    dt: float


def _resolve(ts: TrackSet, vid):
    if vid is None or vid not in ts:
        raise DanglingReference(vid)
    return ts[vid]


def replay_input(scenario, ts: TrackSet, dt: float) -> ReplayInput:
    """Object trajectory (rear bumper, along ego heading) sampled every ``dt``."""
    if not (0 < dt <= 0.1):
        raise ValueError("dt must lie in (0, 0.1]")
    if isinstance(scenario, CutInScenario):
        ego, obj = _resolve(ts, scenario.ego_id), _resolve(ts, scenario.cutin_id)
        start, appear = scenario.t0, scenario.t1
        end = obj.last_frame
    elif isinstance(scenario, FollowingScenario):
        ego, obj = _resolve(ts, scenario.rear_id), _resolve(ts, scenario.front_id)
        start, end = scenario.frame_span
        appear = start
    else:
        raise TypeError(f"unsupported scenario type {type(scenario).__name__}")
    if not (ego.has_frame(start) and obj.has_frame(start)):
        raise DanglingReference(scenario.key if hasattr(scenario, "key") else None)
    fps = ts.meta.frame_rate
    h = ego.heading
    n = int(math.floor((end - start) / fps / dt + 1e-9)) + 1
    t = np.arange(n) * dt
    frame_t = (obj.frames - start) / fps
    x_obj = np.interp(t, frame_t, h * obj.x - obj.width / 2.0)
    v_obj = np.maximum(np.interp(t, frame_t, h * obj.vx), 0.0)
    a_obj = np.interp(t, frame_t, h * obj.ax)
    present = t >= (appear - start) / fps - _EPS_T
    ie = ego.index_of(start)
    return ReplayInput(
        x_obj=x_obj, v_obj=v_obj, a_obj=a_obj, present=present,
        x_ego0=float(h * ego.x[ie] + ego.width[ie] / 2.0),
        v_ego0=max(float(h * ego.vx[ie]), 0.0), dt=dt,
    )


def run_policy(model, inp: ReplayInput, params, blind_duration: float = 0.0) -> SimTrace:
    """Closed-loop replay of one model against a prescribed object trajectory."""
    model = Model.parse(model)
    dt = inp.dt
    n = len(inp.x_obj)
    blind_steps = int(round(blind_duration / dt))
    xs = np.empty(n)
    vs = np.empty(n)
    acc = np.zeros(n)
    x, v, a_prev = inp.x_ego0, inp.v_ego0, 0.0
    t_alert = t_brake = None
    collision, dv, last = False, None, n - 1
    for k in range(n):
        xs[k], vs[k] = x, v
        gap = inp.x_obj[k] - x
        if inp.present[k] and gap <= 0.0:
            collision, dv, last = True, v - inp.v_obj[k], k
            break
        if k == n - 1:
            break
        s = PolicyState(x_ego=x, v_ego=v, x_obj=inp.x_obj[k], v_obj=inp.v_obj[k],
                        obj_present=bool(inp.present[k]) and k >= blind_steps,
                        t=k * dt, a_obj=inp.a_obj[k], t_alert=t_alert, t_brake=t_brake)
        if t_alert is None and threat_perceived(model, s, params):
            t_alert = k * dt
            s = replace(s, t_alert=t_alert)
        demand = policy_step(model, s, params)
        if model is Model.CC:
            # full braking is held until the ego no longer closes in
            if demand < 0 and t_brake is None:
                t_brake = k * dt
            elif demand == 0:
                t_brake = None
        a = limit_command(demand, a_prev, dt, params.j_max, params.a_max)
        acc[k] = a
        x, v = integrate(x, v, a, dt)
        a_prev = a
    sl = slice(0, last + 1)
    return SimTrace(
        t=np.arange(last + 1) * dt, x_ego=xs[sl], v_ego=vs[sl],
        x_obj=inp.x_obj[sl].copy(), v_obj=inp.v_obj[sl].copy(), a_cmd=acc[sl],
        obj_present=inp.present[sl].copy(), collision=collision,
        collision_dv=dv, dt=dt,
    )


def simulate_policy(scenario, ts: TrackSet, model, params=None, dt: float = 0.01,
                    blind_duration: float = 0.0) -> SimTrace:
    """Replay ``scenario``: the ego follows the policy, the object its recording.

    ``params`` may be a :class:`BehaviorParams` bundle or the model's own
    parameter object. For cut-ins the object becomes relevant at T1.
    """
    model = Model.parse(model)
    if params is None or isinstance(params, BehaviorParams):
        params = (params or BehaviorParams()).for_model(model)
    return run_policy(model, replay_input(scenario, ts, dt), params, blind_duration)


@dataclass(frozen=True)
class ComparisonRow:
    scenario: str
    model: str
    collision: bool
    collision_dv: float | None
    min_gap: float


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    models: list[str]

    def collisions(self, model) -> int:
        m = Model.parse(model).value
        return sum(r.collision for r in self.rows if r.model == m)

    def colliding(self, model) -> list[str]:
        m = Model.parse(model).value
        return [r.scenario for r in self.rows if r.model == m and r.collision]

    def summary(self) -> dict:
        return {m: {"collisions": self.collisions(m), "scenarios": self.colliding(m)}
                for m in self.models}


def compare_models(scenarios, ts: TrackSet, models=("RSS", "FSM", "CC"),
                   params: BehaviorParams | None = None, dt: float = 0.01,
                   keep_traces: bool = False):
    """Replay every scenario under every model; rows ordered scenario-major.

    With ``keep_traces`` a ``{(scenario, model): SimTrace}`` dict is returned too.
    """
    params = params or BehaviorParams()
    models = [Model.parse(m) for m in models]
    rows, traces = [], {}
    for sc in scenarios:
        inp = replay_input(sc, ts, dt)
        for m in models:
            tr = run_policy(m, inp, params.for_model(m))
            rows.append(ComparisonRow(scenario=sc.key, model=m.value, collision=tr.collision,
                                      collision_dv=tr.collision_dv, min_gap=tr.min_gap))
            if keep_traces:
                traces[(sc.key, m.value)] = tr
    report = ComparisonReport(rows=rows, models=[m.value for m in models])
    return (report, traces) if keep_traces else report

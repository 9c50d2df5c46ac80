"""Requirement allocation.

Two convex programs:

* partition FN budgets ``p`` minimising the validation mileage
  ``sum ln(1-C)/ln(1-p_i)`` under ``p.E <= lambda'`` with ``p`` non-decreasing;
* component quality levels ``z`` minimising ``sum 1/(1-z_i)`` under
  ``phi0 + phi.z <= r`` and ``0 <= z <= 1 - eps``.

Both have exact KKT solvers (antitonic pooling plus a one-dimensional
multiplier search, and water-filling). A generic log-barrier Newton
method solves the same programs from arbitrary starts and serves as an
independent cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, Infeasible, UnconstrainedBudget

# ln(1-p) is convex-decreasing in the mileage sense only below this level
CONVEX_LIMIT = -math.expm1(-2.0)
DEFAULT_P_BOUNDS = (1e-300, 0.5)
Z_EPS = 1e-6


def mileage_cost(p, C: float) -> float:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if not (0 < C < 1):
        raise DomainError(f"confidence {C} outside (0, 1)")
    if np.any(p <= 0) or np.any(p >= 1):
        raise DomainError("FN rates must lie in (0, 1)")
    return float(np.sum(math.log1p(-C) / np.log1p(-p)))


def mileage_grad(p, C: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    L = np.log1p(-p)
    return math.log1p(-C) / ((1.0 - p) * L * L)


def _antitonic(values: np.ndarray) -> np.ndarray:
    """Least-squares non-increasing fit by pooling adjacent violators."""
    blocks: list[list[float]] = []  # [sum, count]
    for v in values:
        blocks.append([float(v), 1.0])
        while len(blocks) > 1 and blocks[-2][0] / blocks[-2][1] < blocks[-1][0] / blocks[-1][1]:
            s, c = blocks.pop()
            blocks[-1][0] += s
            blocks[-1][1] += c
    out = []
    for s, c in blocks:
        out.extend([s / c] * int(c))
    return np.array(out)


def _p_from_level(c: float, hi: float) -> float:
    """Solve 1/((1-p) ln(1-p)^2) = c for p, i.e. u - 2 ln u = ln c with u = -ln(1-p)."""
    u_hi = -math.log1p(-hi)
    if c <= math.exp(u_hi) / (u_hi * u_hi):
        return hi
    lc = math.log(c)
    # u - 2 ln u is decreasing on (0, 2); bracket in ln u
    a, b = -800.0, math.log(u_hi)
    for _ in range(200):
        m = 0.5 * (a + b)
        if math.exp(m) - 2.0 * m > lc:
            a = m
        else:
            b = m
        if b - a < 1e-15:
            break
    u = math.exp(0.5 * (a + b))
    return -math.expm1(-u)


@dataclass
class PartitionAllocation:
    p: np.ndarray
    cost: float
    lambda_used: float
    feasible: bool
    C: float = 0.95
    solver: str = "kkt"
    budget: float = 0.0

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "cost": self.cost, "lambda_used": self.lambda_used,
                "lambda_prime": self.budget, "feasible": self.feasible,
                "confidence": self.C, "solver": self.solver}


def _check_E(E):
    E = np.asarray(E, dtype=float).ravel()
    if E.size == 0 or np.any(E < 0) or not np.all(np.isfinite(E)):
        raise DomainError("E must be a non-empty vector of non-negative probabilities")
    if E.sum() <= 0:
        raise UnconstrainedBudget("all partition probabilities are zero; the budget never binds")
    return E


def allocate_partition_requirements(E, lambda_prime: float, C: float = 0.95,
                                    bounds=DEFAULT_P_BOUNDS, method: str = "kkt",
                                    x0=None) -> PartitionAllocation:
    E = _check_E(E)
    if not lambda_prime > 0:
        raise DomainError("lambda' must be positive")
    if not (0 < C < 1):
        raise DomainError(f"confidence {C} outside (0, 1)")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0 < lo < hi < 1):
        raise DomainError("bounds must satisfy 0 < lo < hi < 1")
    if hi > CONVEX_LIMIT:
        raise DomainError(f"upper bound {hi} outside the convex region p < {CONVEX_LIMIT:.4f}")
    if lo * E.sum() > lambda_prime:
        raise Infeasible("budget cannot be met even at the lower bound", lo * float(E.sum()))
    if method == "barrier":
        p = _partition_barrier(E, lambda_prime, C, lo, hi, x0)
    elif method == "kkt":
        p = _partition_kkt(E, lambda_prime, lo, hi)
    else:
        raise DomainError(f"unknown method {method!r}")
    used = float(p @ E)
    return PartitionAllocation(p=p, cost=mileage_cost(p, C), lambda_used=used,
                               feasible=used <= lambda_prime * (1 + 1e-12) + 1e-300,
                               C=C, solver=method, budget=lambda_prime)


def _partition_kkt(E, lam, lo, hi) -> np.ndarray:
    M = len(E)
    if M == 1:
        return np.array([min(max(lam / E[0], lo), hi)])
    if hi * E.sum() <= lam:
        return np.full(M, hi)
    Ebar = _antitonic(E)

    def p_of(nu):
        return np.array([hi if e <= 0 else min(max(_p_from_level(nu * e, hi), lo), hi) for e in Ebar])

    def used(nu):
        return float(p_of(nu) @ E)

    # used(nu) decreases in nu; bracket in log space
    a, b = -50.0, 50.0
    while used(math.exp(b)) > lam:
        b += 50.0
    while used(math.exp(a)) < lam:
        a -= 50.0
    for _ in range(300):
        m = 0.5 * (a + b)
        if used(math.exp(m)) > lam:
            a = m
        else:
            b = m
        if b - a < 1e-14:
            break
    p = p_of(math.exp(b))
    # land exactly on the budget: scale the free coordinates
    free = (p > lo) & (p < hi)
    s_free = float(p[free] @ E[free])
    if s_free > 0:
        scale = (lam - float(p[~free] @ E[~free])) / s_free
        if 0 < scale <= 1.0 + 1e-9:
            p[free] = np.minimum(p[free] * min(scale, 1.0), hi)
    return p


# generic log-barrier Newton solver -------------------------------------------------------

def barrier_solve(fun, grad, hess_diag, G, h, x0, t0: float = 1.0, mu: float = 10.0,
                  tol: float = 1e-13, max_newton: int = 100) -> np.ndarray:
    """Minimise a separable convex f subject to G x <= h from a strictly feasible x0.

    ``grad`` and ``hess_diag`` return the gradient and the diagonal of the
    Hessian of ``fun``. Stops when the barrier duality gap m/t drops below
    ``tol``.
    """
    x = np.asarray(x0, dtype=float).copy()
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(G @ x >= h):
        raise ValueError("barrier start is not strictly feasible")
    m = len(h)
    t = t0

    def phi(y, t):
        return t * fun(y) - float(np.sum(np.log(h - G @ y)))

    while True:
        for _ in range(max_newton):
            s = h - G @ x
            g = t * grad(x) + G.T @ (1.0 / s)
            H = np.diag(t * hess_diag(x)) + (G.T * (1.0 / s ** 2)) @ G
            try:
                dx = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                dx = -np.linalg.lstsq(H, g, rcond=None)[0]
            dec = float(-g @ dx)
            if dec / 2.0 <= 1e-14:
                break
            step = 1.0
            Gdx = G @ dx
            pos = Gdx > 0
            if np.any(pos):
                step = min(1.0, 0.99 * float(np.min(s[pos] / Gdx[pos])))
            base = phi(x, t)
            for _ in range(80):
                y = x + step * dx
                if np.all(G @ y < h) and phi(y, t) <= base - 0.25 * step * dec:
                    break
                step *= 0.5
            else:
                break
            x = y
        if m / t <= tol:
            return x
        t *= mu


def _partition_barrier(E, lam, C, lo, hi, x0) -> np.ndarray:
    M = len(E)
    # scaled variables q = p / s keep the Newton system well conditioned
    scale = lam / float(E.sum())
    K = math.log1p(-C)

    # objective rescaled so that sum 1/q is its order of magnitude
    def fun(q):
        return scale * float(np.sum(K / np.log1p(-q * scale))) / abs(K)

    def grad(q):
        return scale * scale * mileage_grad(q * scale, C) / abs(K)

    def hess(q):
        p = q * scale
        L = np.log1p(-p)
        # d/dp of K/((1-p) L^2) = K (L + 2) / ((1-p)^2 L^3)
        return scale ** 3 * (K * (L + 2.0) / ((1.0 - p) ** 2 * L ** 3)) / abs(K)

    rows = [E * scale / lam]
    rhs = [1.0]
    for i in range(M - 1):
        r = np.zeros(M)
        r[i], r[i + 1] = 1.0, -1.0
        rows.append(r)
        rhs.append(0.0)
    G = np.vstack(rows + [np.eye(M), -np.eye(M)])
    h = np.concatenate([rhs, np.full(M, hi / scale), np.full(M, -lo / scale)])
    q0 = np.full(M, 0.5) if x0 is None else np.sort(np.asarray(x0, dtype=float)) / scale
    q0 = _make_interior(q0, G, h)
    q = barrier_solve(fun, grad, hess, G, h, q0)
    return q * scale


def _make_interior(x0, G, h):
    """Shrink a start towards a known interior point until strictly feasible."""
    center = np.full_like(x0, 1e-3)
    # a tiny increasing ramp is strictly interior for both programs' orderings
    center = center * (1.0 + 1e-3 * np.arange(len(x0)))
    if np.any(G @ center >= h):
        raise ValueError("could not find an interior start")
    x = np.asarray(x0, dtype=float)
    for _ in range(200):
        if np.all(G @ x < h):
            return x
        x = 0.5 * (x + center)
    return center


# component allocation --------------------------------------------------------------------

@dataclass
class ComponentAllocation:
    z: np.ndarray
    cost: float
    constraint_value: float
    feasible: bool
    requirement: float
    min_achievable: float
    eps: float = Z_EPS
    solver: str = "waterfill"
    channel_names: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"z": self.z.tolist(), "channels": self.channel_names, "cost": self.cost,
                "constraint_value": self.constraint_value, "requirement": self.requirement,
                "min_achievable": self.min_achievable, "feasible": self.feasible,
                "eps": self.eps, "solver": self.solver}


def development_cost(z) -> float:
    z = np.asarray(z, dtype=float)
    if np.any(z >= 1) or np.any(z < 0):
        raise DomainError("quality levels must lie in [0, 1)")
    return float(np.sum(1.0 / (1.0 - z)))


def min_achievable(phi0: float, phi, eps: float = Z_EPS) -> float:
    """Smallest constraint value over the box corners."""
    phi = np.asarray(phi, dtype=float)
    return float(phi0 + np.sum(np.minimum(phi, 0.0)) * (1.0 - eps))


def allocate_component_requirements(phi0: float, phi, requirement: float, eps: float = Z_EPS,
                                    method: str = "waterfill", x0=None,
                                    channel_names=None) -> ComponentAllocation:
    phi = np.asarray(phi, dtype=float).ravel()
    lo_val = min_achievable(phi0, phi, eps)
    if lo_val > requirement:
        raise Infeasible(
            f"requirement {requirement:.6g} below the minimum achievable value {lo_val:.6g}", lo_val)
    if method == "waterfill":
        z = _waterfill(phi0, phi, requirement, eps)
    elif method == "barrier":
        z = _component_barrier(phi0, phi, requirement, eps, x0)
    else:
        raise DomainError(f"unknown method {method!r}")
    val = float(phi0 + phi @ z)
    tol = 1e-12 * max(1.0, float(np.abs(phi).sum()))
    return ComponentAllocation(z=z, cost=development_cost(z), constraint_value=val,
                               feasible=val <= requirement + tol, requirement=float(requirement),
                               min_achievable=lo_val, eps=eps, solver=method,
                               channel_names=list(channel_names or []))


def _waterfill(phi0, phi, r, eps) -> np.ndarray:
    M = len(phi)
    slack = r - phi0
    z = np.zeros(M)
    if slack >= 0:
        return z
    neg = phi < 0
    a = -phi[neg]
    top = 1.0 - eps

    def z_of(mu):
        return np.clip(1.0 - 1.0 / np.sqrt(mu * a), 0.0, top)

    def reduction(mu):
        return float(a @ z_of(mu))

    need = -slack
    if reduction(1e300) < need * (1 - 1e-15):
        z[neg] = top
        return z
    lo_l, hi_l = math.log(1.0 / a.max()), 0.0
    while reduction(math.exp(hi_l)) < need:
        hi_l += 10.0
    for _ in range(400):
        m = 0.5 * (lo_l + hi_l)
        if reduction(math.exp(m)) < need:
            lo_l = m
        else:
            hi_l = m
        if hi_l - lo_l < 1e-15:
            break
    z[neg] = z_of(math.exp(hi_l))
    return z


def _component_barrier(phi0, phi, r, eps, x0) -> np.ndarray:
    M = len(phi)
    top = 1.0 - eps
    # the constraint row is scaled to unit size
    nrm = float(np.abs(phi).sum()) or 1.0
    G = np.vstack([phi / nrm, np.eye(M), -np.eye(M)])
    h = np.concatenate([[(r - phi0) / nrm], np.full(M, top), np.zeros(M)])
    # strictly interior reference: the max-repair corner pulled slightly inwards
    ref = np.where(phi < 0, top * (1 - 1e-7), 1e-9)
    if not np.all(G @ ref < h):
        # the optimum touches the corner; fall back to the exact solution
        return _waterfill(phi0, phi, r, eps)
    x = np.full(M, 0.5) if x0 is None else np.clip(np.asarray(x0, dtype=float), 1e-9, top - 1e-9)
    for _ in range(200):
        if np.all(G @ x < h):
            break
        x = 0.5 * (x + ref)
    else:
        x = ref

    def fun(z):
        return float(np.sum(1.0 / (1.0 - z)))

    def grad(z):
        return 1.0 / (1.0 - z) ** 2

    def hess(z):
        return 2.0 / (1.0 - z) ** 3

    z = barrier_solve(fun, grad, hess, G, h, x)
    return np.clip(z, 0.0, top)


def kkt_residual(alloc: ComponentAllocation, phi0: float, phi) -> float:
    """Scaled first-order optimality residual of a component allocation.

    Interior coordinates must satisfy grad_i + mu phi_i = 0 for one
    multiplier mu >= 0; bound coordinates the matching sign conditions.
    """
    phi = np.asarray(phi, dtype=float)
    z = alloc.z
    top = 1.0 - alloc.eps
    g = 1.0 / (1.0 - z) ** 2
    scale_tol = 1e-9
    interior = (z > scale_tol) & (z < top - scale_tol)
    if np.any(interior):
        mu = float(-(g[interior] @ phi[interior]) / (phi[interior] @ phi[interior]))
    else:
        mu = 0.0 if alloc.constraint_value < alloc.requirement else float(
            max(0.0, np.max(-g / np.where(phi < 0, phi, -np.inf))))
    res = []
    if mu < 0:
        res.append(-mu)
        mu = 0.0
    stat = g + mu * phi
    for i in range(len(z)):
        if interior[i]:
            res.append(abs(stat[i]) / g[i])
        elif z[i] <= scale_tol:
            res.append(max(0.0, -stat[i]) / g[i])
        else:
            res.append(max(0.0, stat[i]) / g[i])
    span = float(np.abs(phi).sum()) or 1.0
    res.append(max(0.0, alloc.constraint_value - alloc.requirement) / span)
    if mu > 0:
        res.append(abs(alloc.constraint_value - alloc.requirement) / span)
    return float(max(res))


# --- end-to-end verification -------------------------------------------------

PERFORMANCE_OUTPUTS = ("fn", "fp", "ass_a", "loc_a", "det_a", "hota")


def normalized_performance(metrics, original, truth) -> dict[str, float]:
    """Score each output so the original detections give 50 and ground truth 100."""
    from .perception.dataset import OUTPUTS

    out = {}
    for name in PERFORMANCE_OUTPUTS:
        f = OUTPUTS[name]
        m, o, g = getattr(metrics, f), getattr(original, f), getattr(truth, f)
        out[name] = 100.0 if g == o else 50.0 + 50.0 * (m - o) / (g - o)
    return out


@dataclass
class VerificationReport:
    runs: int
    per_run: list
    levels: np.ndarray
    violation_count: int
    fn_frames: int
    total_frames: int
    subsystem_metric: float
    pooled_fn_rate: float
    requirement: float
    passed: bool
    min_run: int
    depth_window: tuple | None
    performance: dict = field(default_factory=dict)
    efficiency: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "violation_count": self.violation_count,
            "fn_frames": self.fn_frames,
            "total_frames": self.total_frames,
            "subsystem_metric": self.subsystem_metric,
            "pooled_fn_rate": self.pooled_fn_rate,
            "requirement": self.requirement,
            "pass": self.passed,
            "min_run_frames": self.min_run,
            "depth_window": None if self.depth_window is None else list(self.depth_window),
            "performance": self.performance,
            "efficiency": self.efficiency,
        }

    def to_csv(self) -> str:
        from .perception.metrics import METRIC_NAMES
        from .perception.perturb import CHANNELS

        counts = ("tp", "fn", "fp", "fn_frames", "n_frames")
        lines = [",".join(("run",) + CHANNELS + METRIC_NAMES + counts)]
        for r, (z, m) in enumerate(zip(self.levels, self.per_run)):
            vals = [repr(float(v)) for v in z]
            vals += ["" if getattr(m, k) is None else repr(float(getattr(m, k))) for k in METRIC_NAMES]
            vals += [str(getattr(m, k)) for k in counts]
            lines.append(",".join([str(r)] + vals))
        return "\n".join(lines) + "\n"


def verify_allocation(alloc, harness, requirement: float, runs: int = 1000, seed: int = 0,
                      depth_window: tuple[float, float] | None = (25.0, 50.0),
                      min_run: int = 1) -> VerificationReport:
    """Re-run the perception chain at or above the allocated quality levels.

    Each run draws every level uniformly from ``[z_i, 1]``, perturbs the
    harness sequences, tracks and scores them. The subsystem metric is the
    pooled ratio of FN frames (frames where an object inside
    ``depth_window`` has been missed for ``min_run`` consecutive frames) to
    all frames.
    """
    from .perception.perturb import FN_CHANNELS, CHANNELS, LevelVector

    if runs < 1:
        raise ValueError("runs must be >= 1")
    z_alloc = np.asarray(alloc.z if hasattr(alloc, "z") else alloc, dtype=float)
    levels = np.empty((runs, len(z_alloc)))
    per_run = []
    for r in range(runs):
        rng = np.random.default_rng([seed, r])
        z = np.minimum(rng.uniform(z_alloc, 1.0), 1.0)
        levels[r] = z
        per_run.append(harness.evaluate(LevelVector.from_array(z), seed=seed * 100003 + r,
                                        depth_window=depth_window, min_run=min_run))
    fn_frames = sum(m.fn_frames for m in per_run)
    total = sum(m.n_frames for m in per_run)
    tp = sum(m.tp for m in per_run)
    fn = sum(m.fn for m in per_run)
    metric = fn_frames / total if total else 0.0
    violations = sum(1 for m in per_run if m.n_frames and m.fn_frames / m.n_frames > requirement)

    original = harness.evaluate(LevelVector.full(0.0), seed=seed)
    truth = harness.evaluate(LevelVector.full(1.0), seed=seed)
    mean = _mean_metrics(per_run)
    fn_only = np.zeros(len(CHANNELS))
    for c in FN_CHANNELS:
        i = CHANNELS.index(c)
        fn_only[i] = z_alloc[i] if z_alloc[i] > 0 else 1.0
    fn_raised = harness.evaluate(LevelVector.from_array(fn_only), seed=seed)
    scores = normalized_performance(fn_raised, original, truth)
    efficiency = {"levels": fn_only.tolist(), "scores": scores,
                  "most_improved": max(scores, key=lambda k: scores[k] - 50.0)}
    return VerificationReport(
        runs, per_run, levels, violations, fn_frames, total, metric,
        fn / (tp + fn) if tp + fn else 0.0, float(requirement), metric <= requirement,
        int(min_run), None if depth_window is None else tuple(depth_window),
        {"requirement_levels": normalized_performance(mean, original, truth),
         "original": 50.0, "ground_truth": 100.0},
        efficiency)


def _mean_metrics(ms):
    from .perception.metrics import MetricVector

    def avg(f):
        vals = [getattr(m, f) for m in ms if getattr(m, f) is not None]
        return float(np.mean(vals)) if vals else None

    return MetricVector(avg("fn_rate"), avg("fp_rate"), avg("det_acc_2d"), avg("det_acc_3d"),
                        avg("det_a"), avg("ass_a"), avg("loc_a"), avg("hota"))

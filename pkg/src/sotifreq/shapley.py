"""Shapley attributions: exact enumeration, kernel SHAP and level regression.

Coalitions use the *replaced* convention: ``z_j = 1`` means feature j is
taken from the background ``b`` instead of the explained input ``x``.
The additive surrogate is ``g(z) = phi0 + sum_j phi_j z_j`` with
``g(0) = f(x)`` and ``g(1) = f(b)``.
"""
from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCoalition, RankDeficient, SingularSystem, TooManyFeatures

MAX_EXACT_FEATURES = 20
COND_LIMIT = 1e12


class Mode(str, enum.Enum):
    EXACT = "ExactEnum"
    KERNEL = "KernelWLS"
    CONTINUOUS = "ContinuousFit"


def shap_kernel_weight(M: int, s: int) -> float:
    if M < 2:
        raise ValueError("kernel weights need M >= 2")
    if s <= 0 or s >= M:
        raise DegenerateCoalition(f"coalition size {s} of {M} has infinite weight")
    return (M - 1) / (math.comb(M, s) * s * (M - s))


@dataclass
class ShapleyExplanation:
    phi0: float
    phi: np.ndarray
    output_name: str = "f"
    mode: Mode = Mode.EXACT
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.mode = Mode(self.mode)

    @property
    def M(self) -> int:
        return len(self.phi)

    def predict(self, z) -> np.ndarray:
        return self.phi0 + np.asarray(z, dtype=float) @ self.phi

    def to_row(self) -> dict:
        names = self.feature_names or [f"phi_{j + 1}" for j in range(self.M)]
        row = {"output_name": self.output_name, "phi0": float(self.phi0)}
        row.update({n: float(v) for n, v in zip(names, self.phi)})
        row["mode"] = self.mode.value
        return row

    def to_dict(self) -> dict:
        return {"output_name": self.output_name, "phi0": float(self.phi0),
                "phi": self.phi.tolist(), "mode": self.mode.value,
                "feature_names": self.feature_names}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapleyExplanation":
        return cls(float(d["phi0"]), np.array(d["phi"], dtype=float), d.get("output_name", "f"),
                   Mode(d.get("mode", Mode.CONTINUOUS.value)), d.get("feature_names"))


def explanations_csv(expls) -> str:
    expls = list(expls)
    buf = io.StringIO()
    if not expls:
        return ""
    names = expls[0].feature_names or [f"phi_{j + 1}" for j in range(expls[0].M)]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["output_name", "phi0", *names, "mode"])
    for e in expls:
        w.writerow([e.output_name, repr(float(e.phi0)), *(repr(float(v)) for v in e.phi), e.mode.value])
    return buf.getvalue()


def _hybrid_matrix(x: np.ndarray, b: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return np.where(Z.astype(bool), b[None, :], x[None, :])


def _evaluate(model, X: np.ndarray) -> np.ndarray:
    return np.array([float(model(row)) for row in X])


def _masks(M: int) -> np.ndarray:
    """All 2^M coalitions as rows of 0/1, row index = bitmask."""
    idx = np.arange(2 ** M)
    return ((idx[:, None] >> np.arange(M)[None, :]) & 1).astype(np.int8)


def _check_inputs(x, b):
    x = np.asarray(x, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if x.shape != b.shape:
        raise ValueError("x and background must have the same length")
    return x, b


def exact_shapley(model, x, b, output_name: str = "f", feature_names=None) -> ShapleyExplanation:
    """Classical Shapley values of v(S) = f(x with features in S replaced by b)."""
    x, b = _check_inputs(x, b)
    M = len(x)
    if M > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact enumeration limited to {MAX_EXACT_FEATURES} features, got {M}")
    Z = _masks(M)
    v = _evaluate(model, _hybrid_matrix(x, b, Z))
    sizes = Z.sum(axis=1)
    w = np.array([math.factorial(s) * math.factorial(M - s - 1) / math.factorial(M)
                  if s < M else 0.0 for s in sizes])
    phi = np.zeros(M)
    for j in range(M):
        bit = 1 << j
        without = np.flatnonzero((np.arange(2 ** M) & bit) == 0)
        phi[j] = np.sum(w[without] * (v[without | bit] - v[without]))
    return ShapleyExplanation(float(v[0]), phi, output_name, Mode.EXACT, feature_names)


def _sample_coalitions(M: int, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Budgeted coalition set with kernel weights.

    Size pairs (s, M-s) are enumerated completely, smallest first, while
    the budget allows; the remaining budget is spent on random coalitions
    from the leftover sizes, drawn proportionally to their kernel mass and
    weighted by multiplicity. With ``n >= 2^M - 2`` this is full enumeration.
    """
    rng = np.random.default_rng(seed)
    rows, weights = [], []
    left = n
    sizes = list(range(1, M))
    mass = {s: shap_kernel_weight(M, s) * math.comb(M, s) for s in sizes}
    pending = []
    for s in range(1, M // 2 + 1):
        pair = [s] if s == M - s else [s, M - s]
        count = sum(math.comb(M, k) for k in pair)
        if not pending and count <= left:
            for k in pair:
                for idx in itertools.combinations(range(M), k):
                    z = np.zeros(M, dtype=np.int8)
                    z[list(idx)] = 1
                    rows.append(z)
                    weights.append(shap_kernel_weight(M, k))
            left -= count
        else:
            pending.extend(pair)
    if pending and left > 0:
        p = np.array([mass[k] for k in pending])
        total = p.sum()
        drawn = rng.choice(pending, size=left, p=p / total)
        Z = np.zeros((left, M), dtype=np.int8)
        for i, k in enumerate(drawn):
            Z[i, rng.choice(M, size=k, replace=False)] = 1
        uniq, counts = np.unique(Z, axis=0, return_counts=True)
        rows.extend(uniq)
        weights.extend(counts * (total / left))
    return np.array(rows, dtype=np.int8).reshape(-1, M), np.array(weights, dtype=float)


def constrained_wls(Z: np.ndarray, y: np.ndarray, w: np.ndarray, phi0: float, total: float) -> np.ndarray:
    """Weighted least squares for phi with sum(phi) = total, intercept fixed.

    The last coefficient is eliminated by substitution and the reduced
    normal equations are solved directly.
    """
    Z = np.asarray(Z, dtype=float)
    M = Z.shape[1]
    r = np.asarray(y, dtype=float) - phi0 - Z[:, -1] * total
    A = Z[:, :-1] - Z[:, [-1]]
    if M == 1:
        return np.array([total])
    AtW = A.T * w
    N = AtW @ A
    cond = np.linalg.cond(N)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystem(f"coalition design is rank deficient (condition number {cond:.3g})")
    head = np.linalg.solve(N, AtW @ r)
    return np.append(head, total - head.sum())


def kernel_shap(model, x, b, n_samples: int | None = None, seed: int = 0,
                output_name: str = "f", feature_names=None) -> ShapleyExplanation:
    """Kernel SHAP; full enumeration when ``n_samples`` is None."""
    x, b = _check_inputs(x, b)
    M = len(x)
    if M < 2:
        raise ValueError("kernel SHAP needs at least two features")
    f_x = float(model(x))
    f_b = float(model(b))
    if n_samples is None:
        if M > MAX_EXACT_FEATURES:
            raise TooManyFeatures(f"full enumeration limited to {MAX_EXACT_FEATURES} features")
        Z = _masks(M)[1:-1]
        w = np.array([shap_kernel_weight(M, int(s)) for s in Z.sum(axis=1)])
    else:
        if n_samples < 1:
            raise ValueError("n_samples must be positive")
        Z, w = _sample_coalitions(M, n_samples, seed)
    y = _evaluate(model, _hybrid_matrix(x, b, Z))
    phi = constrained_wls(Z, y, w, f_x, f_b - f_x)
    return ShapleyExplanation(f_x, phi, output_name, Mode.KERNEL, feature_names)


@dataclass
class PerturbationDataset:
    """Quality-level inputs and the raw output metrics they produced."""

    levels: np.ndarray
    outputs: dict[str, np.ndarray]
    channel_names: list[str]
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        if self.levels.ndim != 2 or self.levels.shape[1] != len(self.channel_names):
            raise ValueError("levels must be an (N, M) array matching the channel names")
        if np.any(self.levels < 0) or np.any(self.levels > 1):
            raise ValueError("levels must lie in [0, 1]")
        if len(np.unique(self.levels, axis=0)) != len(self.levels):
            raise ValueError("duplicate level vectors in perturbation dataset")
        self.outputs = {k: np.asarray(v, dtype=float) for k, v in self.outputs.items()}
        for k, v in self.outputs.items():
            if v.shape != (len(self.levels),):
                raise ValueError(f"output {k!r} has wrong length")

    def __len__(self):
        return len(self.levels)

    def norm_constants(self) -> dict[str, tuple[float, float]]:
        return {k: (float(v.min()), float(v.max())) for k, v in self.outputs.items()}

    def normalized(self, name: str) -> np.ndarray:
        lo, hi = self.norm_constants()[name]
        v = self.outputs[name]
        if hi - lo <= 0:
            return np.zeros_like(v)
        return (v - lo) / (hi - lo)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# " + json.dumps({"normalization": self.norm_constants(), "grid": self.grid},
                                    sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.outputs)
        w.writerow(self.channel_names + names)
        for i in range(len(self)):
            w.writerow([repr(float(v)) for v in self.levels[i]]
                       + [repr(float(self.outputs[n][i])) for n in names])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_channels: int = 6) -> "PerturbationDataset":
        lines = text.splitlines()
        grid = {}
        if lines and lines[0].startswith("#"):
            grid = json.loads(lines[0][1:]).get("grid", {})
            lines = lines[1:]
        rows = list(csv.reader(lines))
        header, body = rows[0], rows[1:]
        data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        outputs = {n: data[:, n_channels + i] for i, n in enumerate(header[n_channels:])}
        return cls(data[:, :n_channels], outputs, header[:n_channels], grid)


def fit_perturbation_linear(ds: PerturbationDataset, output_name: str,
                            normalized: bool = True) -> ShapleyExplanation:
    """Ordinary least squares of one output on the level vector, with intercept."""
    if output_name not in ds.outputs:
        raise KeyError(f"unknown output {output_name!r}")
    N, M = ds.levels.shape
    if N < M + 1:
        raise RankDeficient(f"need at least {M + 1} rows, got {N}")
    y = ds.normalized(output_name) if normalized else ds.outputs[output_name]
    X = np.column_stack([np.ones(N), ds.levels])
    if np.linalg.matrix_rank(X) < M + 1:
        raise RankDeficient("level design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return ShapleyExplanation(float(coef[0]), coef[1:], output_name, Mode.CONTINUOUS,
                              list(ds.channel_names))


def denormalize(expl: ShapleyExplanation, ds: PerturbationDataset) -> ShapleyExplanation:
    """Express a fit made on min-max normalized outputs in raw output units."""
    lo, hi = ds.norm_constants()[expl.output_name]
    span = hi - lo
    return ShapleyExplanation(lo + span * expl.phi0, span * expl.phi, expl.output_name,
                              expl.mode, expl.feature_names)


def coalition_table(M: int):
    """(coalition, kernel weight) for every non-degenerate coalition; handy for inspection."""
    for z in itertools.product((0, 1), repeat=M):
        s = sum(z)
        if 0 < s < M:
            yield z, shap_kernel_weight(M, s)

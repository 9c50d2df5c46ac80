from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.optimize import minimize

from sotifreq.allocation import (Infeasible, allocate_component_requirements, allocate_partition_requirements,
                                 development_cost, kkt_residual, mileage_cost, min_achievable,
                                 normalized_performance, verify_allocation)
from sotifreq.errors import DomainError, UnconstrainedBudget
from sotifreq.perception import LevelVector

FN_ROW = np.array([-0.00189, 0.00300, 0.00043, -0.04758, 0.02310, -0.00028])


def test_mileage_cost_examples():
    assert mileage_cost([1e-6], 0.95) == pytest.approx(math.log(0.05) / math.log1p(-1e-6), rel=1e-12)
    assert mileage_cost([1e-6], 0.95) == pytest.approx(2.9957e6, rel=1e-4)
    assert mileage_cost([0.5], 0.5) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        mileage_cost([0.0], 0.95)
    with pytest.raises(DomainError):
        mileage_cost([0.1], 1.0)


def test_partition_closed_forms():
    a = allocate_partition_requirements([0.1], 1e-6)
    assert a.p[0] == pytest.approx(1e-5, rel=1e-15)
    b = allocate_partition_requirements([0.2, 0.2], 1e-6)
    np.testing.assert_allclose(b.p, [2.5e-6, 2.5e-6], rtol=1e-9)
    with pytest.raises(UnconstrainedBudget):
        allocate_partition_requirements([0.0, 0.0], 1e-6)


def test_partition_matches_scipy_oracle():
    E = np.array([0.02, 0.05, 0.01, 0.03])
    lam = 6.8e-7
    a = allocate_partition_requirements(E, lam)
    s = lam / E.sum()

    def f(q):
        return mileage_cost(q * s, 0.95) * s

    cons = [{"type": "ineq", "fun": lambda q: 1.0 - (q * s) @ E / lam}]
    cons += [{"type": "ineq", "fun": (lambda q, i=i: q[i + 1] - q[i])} for i in range(len(E) - 1)]
    res = minimize(f, np.full(len(E), 0.5), constraints=cons, bounds=[(1e-6, 10.0)] * len(E),
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert res.success
    assert a.cost <= mileage_cost(res.x * s, 0.95) * (1 + 1e-6)
    np.testing.assert_allclose(a.p, res.x * s, rtol=1e-4)


def test_partition_kkt_and_barrier_agree():
    E = np.array([0.03, 0.01, 0.04, 0.0, 0.02])
    k = allocate_partition_requirements(E, 1e-6, bounds=(1e-300, 0.5))
    b = allocate_partition_requirements(E, 1e-6, method="barrier", bounds=(1e-300, 0.5))
    assert b.cost == pytest.approx(k.cost, rel=1e-6)


def test_partition_random_starts():
    E = np.array([0.01, 0.04, 0.02, 0.03])
    rng = np.random.default_rng(0)
    costs = [allocate_partition_requirements(E, 1e-6, method="barrier", x0=rng.random(4) * 1e-6).cost
             for _ in range(10)]
    assert (max(costs) - min(costs)) / min(costs) <= 1e-6


def test_component_reference_fn_row():
    a = allocate_component_requirements(0.048, FN_ROW, 5.87e-6)
    assert a.feasible
    assert a.min_achievable == pytest.approx(-0.00174995, abs=1e-7)
    assert a.constraint_value <= 5.87e-6 + 1e-15
    assert kkt_residual(a, 0.048, FN_ROW) <= 1e-6
    # positive-phi channels are left at the original detector
    assert np.all(a.z[FN_ROW > 0] == 0.0)


def test_component_matches_scipy_oracle():
    phi0, phi, r = 0.3, np.array([-0.1, -0.2, 0.05, -0.15]), 0.1
    a = allocate_component_requirements(phi0, phi, r)
    cons = [{"type": "ineq", "fun": lambda z: r - phi0 - phi @ z}]
    res = minimize(development_cost, np.full(4, 0.5), constraints=cons, bounds=[(0, 1 - 1e-6)] * 4,
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert res.success
    assert a.cost <= res.fun * (1 + 1e-6)
    np.testing.assert_allclose(a.z, res.x, atol=1e-4)


def test_component_random_starts_and_barrier():
    phi0, phi, r = 0.3, np.array([-0.1, -0.2, 0.05, -0.15, -0.02, 0.01]), 0.12
    best = allocate_component_requirements(phi0, phi, r).cost
    rng = np.random.default_rng(1)
    for _ in range(10):
        c = allocate_component_requirements(phi0, phi, r, method="barrier", x0=rng.random(6)).cost
        assert abs(c - best) / best <= 1e-6


def test_component_trivial_cases():
    a = allocate_component_requirements(0.05, FN_ROW, 0.05)
    np.testing.assert_array_equal(a.z, 0.0)
    assert a.cost == pytest.approx(6.0)
    with pytest.raises(Infeasible) as exc:
        allocate_component_requirements(0.05, np.abs(FN_ROW), 0.01)
    assert exc.value.min_achievable == pytest.approx(0.05)
    assert min_achievable(0.05, [0.1, -0.02]) == pytest.approx(0.03, abs=1e-7)


def test_normalized_performance_anchors(small_harness):
    o = small_harness.evaluate(LevelVector.full(0.0))
    g = small_harness.evaluate(LevelVector.full(1.0))
    assert all(v == pytest.approx(50.0) for v in normalized_performance(o, o, g).values())
    assert all(v == pytest.approx(100.0) for v in normalized_performance(g, o, g).values())


def test_verify_all_one_passes(small_harness):
    rep = verify_allocation(np.ones(6), small_harness, 1e-9, runs=3)
    assert rep.subsystem_metric == 0.0 and rep.passed
    assert rep.violation_count == 0 and rep.runs == 3


def test_verify_all_zero_fails_tight_requirement(small_harness):
    rep = verify_allocation(np.zeros(6), small_harness, 1e-6, runs=5, depth_window=None)
    assert rep.subsystem_metric > 1e-6 and not rep.passed
    assert 0 < rep.violation_count <= rep.runs


def test_verify_deterministic(small_harness):
    z = np.full(6, 0.3)
    a = verify_allocation(z, small_harness, 0.01, runs=4, seed=5)
    b = verify_allocation(z, small_harness, 0.01, runs=4, seed=5)
    assert a.to_dict() == b.to_dict()
    assert a.to_csv() == b.to_csv()
    np.testing.assert_array_equal(a.levels, b.levels)
    assert np.all(a.levels >= z)

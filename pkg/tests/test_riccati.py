import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horolab.errors import ConjugatePointError, FinitenessError, NoConvergenceError
from horolab.models import CATALOG, Factor, complex_hyperbolic, constant, flat, product
from horolab.riccati import (
    RiccatiPath,
    backward_limit,
    doubling_schedule,
    propagate_riccati,
    residual_bound,
    riccati_residual,
    riccati_residuals,
    squeeze_ok,
    stable_riccati,
    unstable_riccati,
)
from horolab.symop import SymOp, is_nsd, operator_norm, spectrum

H = 1e-3
H3 = constant(-1.0, 3)
# product models have a flat direction converging like 1/T and need longer schedules
T_MAX = {"H2xR": 128.0, "H2xH2": 128.0}
CONJUGATE_FREE = [k for k, e in CATALOG.items() if e.conjugate_free]


@pytest.fixture(scope="module")
def stable_results():
    return {k: stable_riccati(CATALOG[k].model, 1e-9, T_MAX.get(k, 40.0), H) for k in CONJUGATE_FREE}


def test_schedule():
    assert doubling_schedule(40) == [1, 2, 4, 8, 16, 32]
    assert doubling_schedule(32) == [1, 2, 4, 8, 16, 32]
    assert doubling_schedule(1) == [1]
    with pytest.raises(ValueError):
        doubling_schedule(0.5)


def test_hyperbolic_stable():
    res = stable_riccati(H3, 1e-10, 40.0, H)
    assert res.converged
    np.testing.assert_allclose(res.U.entries, -np.eye(2), atol=1e-9)
    for T, U_T in zip(res.T_schedule, res.iterates):
        np.testing.assert_allclose(U_T.entries, -np.eye(2) / math.tanh(T), atol=1e-7)


def test_raw_gaps_shrink_exponentially():
    res = stable_riccati(H3, 1e-10, 16.0, H, strict=False)
    # coth(T) - coth(2T) ~ 2 exp(-2T)
    for (T, T2), gap in zip(zip(res.T_schedule, res.T_schedule[1:]), res.raw_gaps):
        assert gap == pytest.approx(1 / math.tanh(T) - 1 / math.tanh(T2), rel=1e-6, abs=1e-12)


def test_flat_raw_limit_does_not_converge():
    with pytest.raises(NoConvergenceError) as info:
        stable_riccati(flat(4), 1e-10, 40.0, H, extrapolate=False)
    assert info.value.details["gap"] == pytest.approx(1 / 16 - 1 / 32, abs=1e-9)


def test_flat_raw_limit_with_loose_tolerance():
    res = stable_riccati(flat(4), 1e-3, 40.0, H, extrapolate=False, strict=False)
    assert not res.converged
    assert operator_norm(res.U) <= 2 / 40


def test_flat_extrapolated():
    res = stable_riccati(flat(4), 1e-10, 40.0, H)
    assert res.converged
    assert operator_norm(res.U) <= 1e-9


def test_complex_hyperbolic_stable():
    res = stable_riccati(complex_hyperbolic(2), 1e-10, 40.0, H)
    np.testing.assert_allclose(res.U.entries, np.diag([-2.0, -1.0, -1.0]), atol=1e-9)


def test_unstable_examples():
    np.testing.assert_allclose(unstable_riccati(H3, 1e-10, 40.0, H).U.entries, np.eye(2), atol=1e-9)
    assert operator_norm(unstable_riccati(flat(2), 1e-3, 40.0, H).U) <= 2 / 40
    res = unstable_riccati(product(Factor(-1.0, 2), Factor(0.0, 1), 0.6), 1e-9, 128.0, H)
    assert res.side == "unstable"
    np.testing.assert_allclose(res.U.entries, np.diag([0.6, 0.0]), atol=1e-9)


def test_unstable_on_periodic_uses_reversed_orbit():
    model = CATALOG["periodic"].model
    # kappa(t) is even in t, so the reversed orbit sees the same curvature
    np.testing.assert_allclose(
        unstable_riccati(model).U.entries, -stable_riccati(model).U.entries, atol=1e-12
    )
    shifted = model.shifted(0.3)
    Uu = unstable_riccati(shifted).U
    Us_rev = stable_riccati(shifted.reversed()).U
    np.testing.assert_allclose(Uu.entries, -Us_rev.entries, atol=1e-15)


def test_sphere_has_no_stable_solution():
    with pytest.raises(ConjugatePointError):
        stable_riccati(CATALOG["sphere2"].model)


@pytest.mark.parametrize("key", CONJUGATE_FREE)
def test_monotone_and_squeeze(stable_results, key):
    res = stable_results[key]
    for inc in res.increments():
        assert spectrum(inc).min >= -1e-8
    assert squeeze_ok(res)
    assert is_nsd(res.U, 1e-8)
    assert operator_norm(res.U) <= abs(res.U.trace()) + 1e-8


@pytest.mark.parametrize("key", ["H2", "H3", "H4", "CH2", "flat3", "H2xR", "H2xH2"])
def test_catalog_closed_forms(stable_results, key):
    np.testing.assert_allclose(np.diag(stable_results[key].U.entries), CATALOG[key].stable, atol=1e-8)


@pytest.mark.parametrize("key", ["H2", "H3", "CH2", "H2xR"])
def test_stable_solution_is_fixed_point(stable_results, key):
    U = stable_results[key].U
    path = propagate_riccati(CATALOG[key].model, U, 0.0, 5.0, H)
    assert np.max(np.linalg.norm(path.U - U.entries, ord=2, axis=(1, 2))) <= 1e-7


@pytest.mark.parametrize("key", ["H2", "H3", "H4"])
def test_backward_integration_cross_check(stable_results, key):
    U = backward_limit(CATALOG[key].model, 40.0, H)
    assert operator_norm(U - stable_results[key].U) <= 10 * 1e-9


def test_backward_integration_periodic_agrees(stable_results):
    U = backward_limit(CATALOG["periodic"].model, 40.0, H)
    assert operator_norm(U - stable_results["periodic"].U) <= 1e-8


def test_fixed_point_hyperbolic():
    path = propagate_riccati(constant(-1.0, 2), SymOp.identity(1, -1.0), 0.0, 10.0, H)
    np.testing.assert_allclose(path.U, -1.0, atol=1e-9)
    assert riccati_residual(path) <= 1e-10


def test_flat_forward_decay():
    path = propagate_riccati(flat(3), SymOp.identity(2), 0.0, 5.0, H)
    np.testing.assert_allclose(path.U[:, 0, 0], 1 / (1 + path.t), atol=1e-8)
    assert riccati_residual(path) <= 1e-6


def test_flat_backward_from_negative_identity():
    # u = -1/(1 - t) solves u' + u^2 = 0 for t < 1
    path = propagate_riccati(flat(3), SymOp.identity(2, -1.0), 0.0, -5.0, H)
    np.testing.assert_allclose(path.U[:, 0, 0], -1 / (1 - path.t), atol=1e-8)
    assert riccati_residual(path) <= 1e-6


def test_flat_forward_from_negative_identity_blows_up():
    with pytest.raises(FinitenessError) as info:
        propagate_riccati(flat(3), SymOp.identity(2, -1.0), 0.0, 5.0, H)
    assert info.value.details["t"] == pytest.approx(1.0, abs=0.01)


def test_attraction_towards_unstable_solution():
    path = propagate_riccati(constant(-1.0, 2), SymOp.identity(1, 2.0), 0.0, 3.0, H)
    c = math.atanh(0.5)
    np.testing.assert_allclose(path.U[:, 0, 0], 1 / np.tanh(path.t + c), atol=1e-9)
    assert abs(path.U[-1, 0, 0] - 1.0) < abs(path.U[0, 0, 0] - 1.0) / 100


def test_corrupted_path_detected():
    path = propagate_riccati(constant(-1.0, 2), SymOp.identity(1, -1.0), 0.0, 2.0, H)
    bad = RiccatiPath(path.t, 1.1 * path.U, path.model, path.h)
    assert riccati_residual(bad) >= 0.1


@pytest.mark.parametrize("key, U0", [("H2", 2.0), ("CH2", 3.0), ("periodic", 0.5), ("flat3", 1.0)])
def test_residual_contract(key, U0):
    model = CATALOG[key].model
    for h in (1e-3, 5e-4):
        path = propagate_riccati(model, SymOp.identity(model.dim, U0), 0.0, 3.0, h)
        assert np.all(riccati_residuals(path) <= residual_bound(path))


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.7, 0.7), st.floats(0.0, 0.7))
def test_path_stays_symmetric_and_uniform(a, off):
    # eigenvalues stay above -1, where the forward flow on H3 is bounded
    U0 = SymOp(np.array([[a, off], [off, -a]]))
    path = propagate_riccati(H3, U0, 0.0, 1.0, H)
    np.testing.assert_array_equal(path.U, np.swapaxes(path.U, 1, 2))
    steps = np.diff(path.t)
    np.testing.assert_allclose(steps, steps[0], rtol=1e-9)
    assert riccati_residual(path) <= 1e-6


def test_json_round_trip():
    res = stable_riccati(H3, 1e-10, 40.0, H)
    d = json.loads(json.dumps(res.to_dict()))
    assert d["side"] == "stable" and d["dim"] == 2 and d["converged"]
    assert d["T_schedule"] == res.T_schedule
    np.testing.assert_array_equal(np.array(d["U"]), res.U.entries)
    assert len(d["gaps"]) == len(d["T_schedule"]) - 2
    assert len(d["raw_gaps"]) == len(d["T_schedule"]) - 1

import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from avgraph.errors import DeltaOutOfRange, NonPositiveDrift
from avgraph.spectral import (alpha_and_projection, complement_basis, ebar, f_epsilon_closed,
                              f_epsilon_profile, matrix_exponential, n_delta, n_matrix,
                              second_eigenpair, spectral_sweep, sweep_csv)

from helpers import diffusive

DELTAS = (1e-1, 1e-2, 1e-3)


# -- N(z) and its average ---------------------------------------------------------

def test_n_matrix_examples(m2, m3):
    np.testing.assert_allclose(n_matrix(m2, -1.0), [[-1, 1], [0.5, -0.5]], atol=1e-15)
    np.testing.assert_array_equal(n_matrix(m2, 0.0), np.zeros((2, 2)))
    # by definition: rows of Q(0) divided by v = (1, 2, 3)
    np.testing.assert_allclose(n_matrix(m3, 0.0), [[-2, 2, 0], [0.5, -0.5, 0], [0, 0, 0]],
                               atol=1e-15)


def test_n_matrix_needs_positive_drift():
    with pytest.raises(NonPositiveDrift):
        n_matrix(diffusive("m2", drift=0.0), -0.5)


@pytest.mark.parametrize("delta", [0.01, 0.3, 1.0])
def test_n_delta_closed_form(m2, delta):
    np.testing.assert_allclose(n_delta(m2, delta), delta / 4 * np.array([[-1, 1], [0.5, -0.5]]),
                               rtol=1e-10, atol=1e-15)


def test_n_delta_range(m2):
    with pytest.raises(DeltaOutOfRange):
        n_delta(m2, 0.0)
    with pytest.raises(DeltaOutOfRange):
        n_delta(m2, m2.C * 1.5)


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_n_delta_rows_and_perturbation(name, request):
    model = request.getfixturevalue(name)
    N0 = n_matrix(model, 0.0)
    ratios = []
    for d in DELTAS:
        Nd = n_delta(model, d)
        assert np.abs(Nd.sum(axis=1)).max() <= 1e-15 * np.abs(Nd).max()
        ratios.append(np.abs(Nd - N0).max() / d)
    assert max(ratios) < 10 * min(ratios) + 1e-12


# -- matrix exponential -----------------------------------------------------------

def test_expm_examples():
    np.testing.assert_array_equal(matrix_exponential(np.zeros((3, 3))), np.eye(3))
    a, b = 0.7, -2.3
    np.testing.assert_allclose(matrix_exponential(np.diag([a, b])), np.diag(np.exp([a, b])),
                               rtol=1e-14, atol=0)


@pytest.mark.parametrize("t", [1.0, 10.0, 100.0])
def test_expm_preserves_e(m3, t):
    Nd = n_delta(m3, 0.1)
    out = matrix_exponential(t * Nd / 0.1) @ np.ones(3)
    assert np.abs(out - 1).max() <= 1e-12


@given(st.integers(1, 6).flatmap(
    lambda n: hnp.arrays(float, (n, n), elements=st.floats(-3, 3))))
def test_expm_matches_scipy(A):
    ref = scipy.linalg.expm(A)
    np.testing.assert_allclose(matrix_exponential(A), ref, rtol=1e-11,
                               atol=1e-12 * np.abs(ref).max())


@given(st.integers(2, 8).flatmap(
    lambda n: hnp.arrays(float, (n, n), elements=st.floats(0, 50))), st.floats(0.1, 100))
def test_expm_row_sum_zero(rates, t):
    Q = rates.copy()
    np.fill_diagonal(Q, 0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    P = matrix_exponential(t * Q)
    assert np.abs(P.sum(axis=1) - 1).max() <= 1e-12
    assert P.min() >= -1e-12


def test_expm_batched():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 4, 4))
    B = matrix_exponential(A)
    for k in range(5):
        np.testing.assert_allclose(B[k], scipy.linalg.expm(A[k]), rtol=1e-12, atol=1e-13)


# -- f_eps profile ------------------------------------------------------------------

@pytest.mark.parametrize("delta,eps", [(0.05, 1e-4), (0.1, 1e-2), (0.5, 1e-3)])
def test_profile_commuting_closed_form(m2, delta, eps):
    a = f_epsilon_profile(m2, delta, eps)
    b = f_epsilon_closed(m2, delta, eps)
    assert np.abs(a - b).max() <= 1e-8


def test_profile_mixing_limit(m2):
    f = f_epsilon_profile(m2, 0.05, 1e-4)
    assert np.abs(f - 1 / 3).max() <= 5e-3


def test_profile_no_mixing(m3):
    np.testing.assert_allclose(f_epsilon_profile(m3, 0.05, 1e12), ebar(m3), atol=1e-9)


def test_profile_limit_m2_matches_projection(m2):
    proj = alpha_and_projection(m2, 0.05).pi_proj
    prev, diffs = None, []
    for eps in (2e-3, 1e-3, 5e-4, 2.5e-4):
        f = f_epsilon_profile(m2, 0.05, eps)
        if prev is not None:
            diffs.append(np.abs(f - prev).max())
        prev = f
    assert all(a > b for a, b in zip(diffs, diffs[1:]))
    assert np.abs(f_epsilon_profile(m2, 0.05, 1e-5) - proj).max() <= 1e-6


def test_profile_limit_m3_is_branching_probability(m3):
    # the N(z) do not commute for M3; the small-eps limit is p1, not the
    # delta-dependent projection
    p1 = m3.class_data.p1
    prev, diffs = None, []
    for eps in (4e-5, 2e-5, 1e-5):
        f = f_epsilon_profile(m3, 0.05, eps)
        if prev is not None:
            diffs.append(np.abs(f - prev).max())
        prev = f
    assert diffs[1] < diffs[0]
    assert np.abs(prev - p1).max() <= 1e-4


# -- eigen-structure ----------------------------------------------------------------

def test_second_eigenpair_m2(m2):
    pair = second_eigenpair(m2, 0.1)
    assert pair.lam == pytest.approx(-0.0375, rel=1e-10)
    assert pair.vec[1] / pair.vec[0] == pytest.approx(-0.5, rel=1e-10)
    assert pair.top == pytest.approx(0.0, abs=1e-15)
    assert pair.residual <= 1e-10


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_top_pair_and_negative_gap(name, request):
    model = request.getfixturevalue(name)
    pair = second_eigenpair(model, 1e-2)
    assert pair.lam < 0 and pair.gap > 0
    Nd = n_delta(model, 1e-2)
    assert np.abs(Nd @ np.ones(model.n)).max() <= 1e-15


@pytest.mark.parametrize("delta", [1e-3, 1e-2, 1e-1, 1.0])
def test_alpha_m2(m2, delta):
    r = alpha_and_projection(m2, delta)
    v = m2.drift_vector(0.0)
    assert r.alpha == pytest.approx(-1 - (0.5 * v[1]) / (0.5 * v[0]), abs=1e-9)
    assert abs(r.alpha + 3) <= 1e-9
    assert abs(r.pi_proj - 1 / 3) <= 1e-12
    np.testing.assert_allclose(r.psi, [1 / 3, 2 / 3], atol=1e-12)


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_report_invariants(name, request):
    model = request.getfixturevalue(name)
    reps = spectral_sweep(model, DELTAS)
    for r in reps:
        assert r.psi_residual <= 1e-10
        assert abs(r.psi.sum() - 1) <= 1e-12
        assert abs(r.g_psi) <= 1e-8
        assert r.lambda1 < 0
        np.testing.assert_allclose(r.Hdelta, r.Ndelta - r.N0)
        for pk in (r.pi1, r.pi2):
            assert np.abs(pk @ r.N0).max() <= 1e-10 * np.abs(pk).max()
    last = reps[-1]
    assert abs(-1 / last.alpha - last.pi_proj) <= 1e-6
    errs = [abs(r.pi_proj - model.class_data.p1) for r in reps]
    if name == "m2":  # commuting case: exact for every delta
        assert max(errs) <= 1e-12
    else:
        assert errs[0] > errs[1] > errs[2] and errs[2] <= 1e-2


def test_report_serialization(m3):
    r = alpha_and_projection(m3, 0.01)
    doc = json.loads(r.to_json())
    assert doc["alpha"] == r.alpha and len(doc["Ndelta"]) == 3
    text = sweep_csv([r])
    assert text.splitlines()[0] == "delta,lambda1,alpha,pi_proj,p1,gap"


def test_complement_basis_defective():
    # Jordan block for eigenvalue -1 next to a double zero
    N0 = np.array([[0.0, 0, 0, 0], [0, 0, 0, 0], [0, 0, -1, 1], [0, 0, 0, -1]])
    Z = complement_basis(N0)
    assert Z.shape == (4, 2)
    np.testing.assert_allclose(np.abs(Z[:2]), 0, atol=1e-12)
    np.testing.assert_allclose(Z.T @ Z, np.eye(2), atol=1e-12)

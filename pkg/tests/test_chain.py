import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from avgraph.chain import (VERTEX, GraphPoint, aggregated_pi, averaged_drift,
                           class_masses_and_branching, generator_matrix, invariant_distribution,
                           invariant_mu, limit_pi, project_h, stationary_distribution,
                           validate_model, _grid)
from avgraph.errors import (BadClassSplit, BrokenBlockStructure, EdgeCoordMismatch,
                            MissingTailConstancy, NegativeRate, NonPositiveDrift)

from helpers import power_iteration, variant


# -- validation ---------------------------------------------------------------

def test_fixtures_validate(m2, m3):
    assert m2.validated and m3.validated
    assert m2.diagnostics["max_residual"] <= 1e-12
    assert m3.diagnostics["max_residual"] <= 1e-12


def test_cross_rate_on_upper_block_rejected():
    def edit(doc):
        doc["rates"]["q_1_2"]["table"] = [[-1.0, 1.0], [0.0, 0.0], [0.5, 0.1], [1.0, 0.0]]
    with pytest.raises(BrokenBlockStructure):
        variant("m2", edit)


def test_negative_drift_rejected_for_ode_motion():
    def edit(doc):
        doc["drifts"]["v_1"]["table"] = [[-2.0, 1.5], [-1.0, -1.0], [1.0, -1.0], [2.0, 1.5]]
    with pytest.raises(NonPositiveDrift):
        variant("m2", edit)


def test_negative_drift_allowed_with_noise():
    def edit(doc):
        doc["meta"]["kappa"] = 1
        doc["drifts"]["v_1"]["table"] = [[-2.0, 1.5], [-1.0, -1.0], [1.0, -1.0], [2.0, 1.5]]
    assert variant("m2", edit).validated


def test_negative_rate_rejected():
    def edit(doc):
        doc["rates"]["q_1_2"]["table"] = [[-1.5, -0.5], [-1.0, 1.0], [0.0, 0.0]]
    with pytest.raises(NegativeRate):
        variant("m2", edit)


def test_tail_mismatch_rejected():
    def edit(doc):
        doc["rates"]["q_2_1"]["left"] = 3.0
    with pytest.raises(MissingTailConstancy):
        variant("m2", edit)


def test_drift_tail_mismatch_rejected():
    def edit(doc):
        doc["meta"]["vinf"] = 4.0
    with pytest.raises(MissingTailConstancy):
        variant("m2", edit)


def test_bad_class_split():
    def edit(doc):
        doc["meta"]["m"] = 2
    with pytest.raises(BadClassSplit):
        variant("m2", edit)


def test_within_class_rate_must_stay_positive():
    def edit(doc):
        doc["rates"]["q_1_2"]["table"] = [[-1.0, 2.0], [0.5, 0.0], [1.0, 2.0]]
    with pytest.raises(BrokenBlockStructure):
        variant("m3", edit)


def test_mismatched_degeneracy_rates_rejected():
    # q_1_2 ~ (-z), q_2_1 ~ (-z)^2: the cross rates do not degenerate together
    def edit(doc):
        doc["rates"]["q_2_1"] = {"left": 1.0, "right": 0.0, "table": [[-1.0, 0.0], [0.0, 0.0]],
                                 "qbar": 1.0, "power": 2.0}
        doc["rates"]["q_2_1"]["table"] = [[-2.0, 0.0], [0.0, 0.0]]
        doc["rates"]["q_2_1"]["left"] = 4.0
    with pytest.raises(BrokenBlockStructure):
        variant("m2", edit)


def test_degenerate_form_accepted():
    # both cross rates qbar (-z) (1 + beta) with beta(0) = 0
    def edit(doc):
        for key in ("q_1_2", "q_2_1"):
            doc["rates"][key] = {"left": 2.0, "right": 0.0, "table": [[0.0, 0.0]], "qbar": 1.0,
                                 "beta": [[-2.0, 0.0], [-1.0, 0.0], [0.0, 0.0]]}
    m = variant("m2", edit)
    assert m.rate(1, 2, -0.25) == pytest.approx(0.25)
    assert m.rate(1, 2, -5.0) == 2.0


# -- generator and invariant vectors ------------------------------------------

def test_generator_examples(m2, m3):
    np.testing.assert_allclose(generator_matrix(m2, -0.5), [[-0.5, 0.5], [0.5, -0.5]])
    np.testing.assert_array_equal(generator_matrix(m2, 0.5), np.zeros((2, 2)))
    np.testing.assert_allclose(generator_matrix(m3, 0.0),
                               [[-2, 2, 0], [1, -1, 0], [0, 0, 0]], atol=0)


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_generator_rows_and_signs(name, request):
    model = request.getfixturevalue(name)
    zs = np.linspace(-model.C - 1, model.C + 1, 401)
    for z in zs:
        Q = generator_matrix(model, z)
        assert np.abs(Q.sum(axis=1)).max() <= 1e-14
        off = Q[~np.eye(model.n, dtype=bool)]
        assert off.min() >= 0


def test_invariant_examples(m2, m3):
    np.testing.assert_allclose(invariant_distribution(m2, -0.5).mu, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(invariant_distribution(m2, 1.0).mu, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(invariant_distribution(m3, 1.0).mu, [2 / 9, 4 / 9, 1 / 3],
                               atol=1e-12)


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_invariant_residual_on_grid(name, request):
    model = request.getfixturevalue(name)
    zs = _grid(model)
    mu = invariant_mu(model, zs)
    Q = model.rate_matrix(zs)
    idx = np.arange(model.n)
    Q[:, idx, idx] = 0
    Q[:, idx, idx] = -Q.sum(axis=-1)
    assert np.abs(np.einsum("ki,kij->kj", mu, Q)).max() <= 1e-12
    assert np.abs(mu.sum(axis=1) - 1).max() <= 1e-12


@pytest.mark.parametrize("name", ["m2", "m3"])
def test_invariant_continuity(name, request):
    model = request.getfixturevalue(name)
    zs = _grid(model)
    mu = invariant_mu(model, zs)
    L = model.diagnostics["lipschitz"]
    assert np.isfinite(L)
    assert np.abs(np.diff(mu, axis=0)).max() <= (L + 1e-9) * np.diff(zs).max()
    pi = model.class_data.pi
    assert np.abs(invariant_distribution(model, -1e-8).mu - pi).max() <= 1e-6


def test_limit_pi_examples(m2, m3):
    np.testing.assert_allclose(limit_pi(m2).pi, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(limit_pi(m3).pi, [2 / 9, 4 / 9, 1 / 3], atol=1e-9)
    for m in (m2, m3):
        assert abs(limit_pi(m).pi.sum() - 1) <= 1e-12
        assert np.abs(aggregated_pi(m) - limit_pi(m).pi).max() <= 1e-6


def test_class_data_examples(m2, m3):
    c2 = class_masses_and_branching(m2)
    assert (c2.pi_bar1, c2.pi_bar2) == pytest.approx((0.5, 0.5), abs=1e-12)
    assert c2.p1 == pytest.approx(1 / 3, abs=1e-12)
    assert c2.vertex_weights == pytest.approx((0.5, 0.25, 0.25))
    c3 = class_masses_and_branching(m3)
    assert c3.p1 == pytest.approx(10 / 19, abs=1e-9)
    assert (c3.pi_bar1, c3.pi_bar2) == pytest.approx((2 / 3, 1 / 3), abs=1e-9)
    for c in (c2, c3):
        assert c.p1 + c.p2 == pytest.approx(1, abs=1e-15)
        assert c.pi_bar1 + c.pi_bar2 == pytest.approx(1, abs=1e-15)
        assert sum(c.vertex_weights) == pytest.approx(1, abs=1e-15)


def _scale_drifts(doc, k):
    doc["meta"]["vinf"] *= k
    for v in doc["drifts"].values():
        v["table"] = [[z, k * x] for z, x in v["table"]]


def test_branching_invariant_under_drift_scaling(m3):
    scaled = variant("m3", lambda d: _scale_drifts(d, 7.0))
    assert scaled.class_data.p1 == pytest.approx(m3.class_data.p1, abs=1e-12)


def test_equal_drifts_give_class_mass():
    def edit(doc):
        for v in doc["drifts"].values():
            v["table"] = [[0.0, doc["meta"]["vinf"]]]
    m = variant("m3", edit)
    assert m.class_data.p1 == pytest.approx(m.class_data.pi_bar1, abs=1e-12)


def test_averaged_drift_examples(m2, m3):
    assert averaged_drift(m2, 0, -0.5) == pytest.approx(1.5)
    assert averaged_drift(m2, 1, 0.3) == pytest.approx(1.0)
    assert averaged_drift(m2, 2, 0.3) == pytest.approx(2.0)
    assert averaged_drift(m3, 1, 0.0) == pytest.approx(5 / 3, abs=1e-12)
    with pytest.raises(EdgeCoordMismatch):
        averaged_drift(m2, 1, -0.1)
    with pytest.raises(EdgeCoordMismatch):
        averaged_drift(m2, 0, 0.1)


def test_projection_examples(m3):
    assert project_h(m3, 1, -0.7) == GraphPoint(0, -0.7)
    assert project_h(m3, 3, 0.7) == GraphPoint(2, 0.7)
    assert project_h(m3, 1, 0.7) == GraphPoint(1, 0.7)
    for i in (1, 2, 3):
        assert project_h(m3, i, 0.0) == VERTEX


def test_graph_point_conventions():
    assert GraphPoint(2, 0.0) == VERTEX
    with pytest.raises(EdgeCoordMismatch):
        GraphPoint(1, -0.1)
    with pytest.raises(EdgeCoordMismatch):
        GraphPoint(0, 0.1)
    with pytest.raises(EdgeCoordMismatch):
        GraphPoint(3, 0.1)


# -- stationary vectors: oracle and properties ---------------------------------

def _random_generator(rng, n):
    Q = rng.exponential(size=(n, n)) * (rng.random((n, n)) < 0.7)
    # a cycle keeps the chain irreducible
    for i in range(n):
        Q[i, (i + 1) % n] += rng.uniform(0.1, 1.0)
    np.fill_diagonal(Q, 0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def test_stationary_matches_power_iteration():
    rng = np.random.default_rng(20240611)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        Q = _random_generator(rng, n)
        mu = stationary_distribution(Q)
        assert np.abs(mu - power_iteration(Q)).max() <= 1e-8
        assert np.abs(mu @ Q).max() <= 1e-12


@given(st.integers(2, 8).flatmap(
    lambda n: hnp.arrays(float, (n, n), elements=st.floats(1e-3, 1e3))))
def test_stationary_properties(rates):
    Q = rates.copy()
    np.fill_diagonal(Q, 0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    mu = stationary_distribution(Q)
    assert np.all(mu > 0)
    assert abs(mu.sum() - 1) <= 1e-12
    scale = np.abs(Q).max()
    assert np.abs(mu @ Q).max() <= 1e-12 * scale
    # time change of the whole chain leaves mu unchanged
    np.testing.assert_allclose(stationary_distribution(5.0 * Q), mu, rtol=1e-12)


@given(st.floats(-3.0, 3.0))
def test_invariant_is_probability(z):
    from avgraph.config import load_fixture
    m3 = load_fixture("m3")
    res = invariant_distribution(m3, z)
    assert res.residual <= 1e-12
    assert np.all(res.mu >= 0) and abs(res.mu.sum() - 1) <= 1e-12


def test_validate_is_idempotent(m3):
    again = validate_model(m3)
    assert again == m3

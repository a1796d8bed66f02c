import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varexp import checks
from varexp.grid import build_grid
from varexp.lebesgue import ExponentField
from varexp.operators import (
    OperatorValidityWarning,
    check_hypotheses,
    flux_consistency_error,
    mean_curvature_model,
    plaplace_model,
)

G = build_grid(3, [5, 5, 5], [1.0, 1.0, 1.0])

# dense ratio sampling of the midpoint-convexity gap (scripts/oracles.py)
CLARKSON_DENSE_P25 = 0.07071067811865475
CLARKSON_DENSE_P2 = 0.12499999999990645

vectors = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3).map(np.array)
exponents = st.floats(2.0, 4.0)


@pytest.mark.parametrize("make", [plaplace_model, mean_curvature_model])
def test_p2_reduces_to_laplacian(make):
    m = make(ExponentField.constant(G, 2.0))
    xi = np.array([[0.3, -1.2, 2.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(m.A(xi, 2.0), 0.5 * np.sum(xi**2, axis=1), rtol=1e-14)
    np.testing.assert_allclose(m.a(xi, 2.0), xi, rtol=1e-14)


@pytest.mark.parametrize("make", [plaplace_model, mean_curvature_model])
def test_zero_gradient(make):
    m = make(ExponentField.constant(G, 2.3))
    assert m.A(np.zeros(3), 2.3) == 0.0
    assert not np.any(m.a(np.zeros(3), 2.3))


def test_hand_values():
    pl = plaplace_model(ExponentField.constant(G, 3.0))
    assert pl.A([2.0, 0, 0], 3.0) == pytest.approx(8 / 3, rel=1e-15)
    np.testing.assert_allclose(pl.a([2.0, 0, 0], 3.0), [4, 0, 0], rtol=1e-15)
    mc = mean_curvature_model(ExponentField.constant(G, 4.0))
    assert mc.A([1.0, 0, 0], 4.0) == pytest.approx(0.75, rel=1e-15)
    np.testing.assert_allclose(mc.a([1.0, 0, 0], 4.0), [2, 0, 0], rtol=1e-15)


@given(vectors, exponents)
def test_a5_pointwise(xi, p):
    for m in (plaplace_model, mean_curvature_model):
        model = m(ExponentField.constant(G, p))
        axi = float(model.a(xi, p) @ xi)
        n = float(np.linalg.norm(xi))
        pa = p * float(model.A(xi, p))
        assert n**p <= axi * (1 + 1e-12) + 1e-300
        assert axi <= pa * (1 + 1e-12) + 1e-300


def test_validity_warning_below_two():
    p = ExponentField.constant(G, 1.6)
    with pytest.warns(OperatorValidityWarning):
        m = plaplace_model(p)
    assert m.warnings
    rep = check_hypotheses(m, p, G, 500)
    assert any("skipped" in n for n in rep.notes)


def test_flux_consistency():
    p = ExponentField.affine(G, 0, 2.0, 2.5)
    for m in (plaplace_model(p), mean_curvature_model(p)):
        assert flux_consistency_error(m, p, 3, 1000) < 1e-6


def test_plaplace_hypotheses_and_clarkson_floor():
    p = ExponentField.affine(G, 0, 2.0, 2.5)
    rep = check_hypotheses(plaplace_model(p), p, G, 10_000)
    assert rep.all_pass
    assert rep.c1 > 0 and rep.k > 0
    assert rep.k >= CLARKSON_DENSE_P25 - 1e-12
    assert rep.k >= 0.9 * checks.clarkson_floor(p.p_plus)


def test_mean_curvature_quadratic_case():
    p = ExponentField.constant(G, 2.0)
    rep = check_hypotheses(mean_curvature_model(p), p, G, 10_000)
    assert rep.all_pass
    assert rep.k == pytest.approx(CLARKSON_DENSE_P2, rel=1e-9)
    # c1 = sup |xi| / (1 + |xi|) approaches 1 from below
    assert 0.99 < rep.c1 <= 1.0


def test_broken_model_fails_a1():
    p = ExponentField.constant(G, 2.2)
    rep = check_hypotheses(checks.broken_model(), p, G, 1000)
    assert not rep.verdicts["A1"]
    assert rep.worst_violation["A1"] == pytest.approx(1.0)
    assert not rep.all_pass


def test_nonmonotone_flux_fails_a3():
    p = ExponentField.constant(G, 2.0)
    m = plaplace_model(p)
    from varexp.operators import OperatorModel

    bad = OperatorModel("bad", m.potential, lambda xi, pe: -m.flux(xi, pe))
    assert not check_hypotheses(bad, p, G, 1000).verdicts["A3"]


def test_isotropy_under_rotation():
    p = ExponentField.constant(G, 2.4)
    m = plaplace_model(p)
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    xi = rng.standard_normal((200, 3))
    np.testing.assert_allclose(m.A(xi @ q.T, 2.4), m.A(xi, 2.4), rtol=1e-12)
    np.testing.assert_allclose(m.a(xi @ q.T, 2.4), m.a(xi, 2.4) @ q.T, rtol=1e-10, atol=1e-14)


def test_reproducible():
    p = ExponentField.affine(G, 0, 2.0, 2.5)
    a = check_hypotheses(plaplace_model(p), p, G, 2000, seed=9)
    b = check_hypotheses(plaplace_model(p), p, G, 2000, seed=9)
    assert a == b


def test_rejects_zero_samples():
    p = ExponentField.constant(G, 2.0)
    with pytest.raises(ValueError):
        check_hypotheses(plaplace_model(p), p, G, 0)

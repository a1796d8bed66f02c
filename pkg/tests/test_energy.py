import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import make_params
from varexp.energy import (
    ParameterError,
    ProblemParams,
    TruncationData,
    energy_change_I,
    energy_change_J,
    energy_I,
    energy_J,
    gradient_modular,
    lagged_metric,
    lambda1_estimate,
    operator_energy,
    rayleigh_ratio,
    relax_dead_core,
    residual_I,
    residual_J,
    theorem_compliance,
    truncation_g,
    truncation_G,
)
from varexp.grid import GridFunction, build_grid
from varexp.lebesgue import ExponentField
from varexp.operators import check_hypotheses, plaplace_model

# dense generalized eigensolve, 65 nodes, lumped mass (scripts/oracles.py)
LAMBDA1_DENSE_65 = 4.933811383614096
# adaptive quadrature of g over [0, 3] with u1 = 2, beta = 1.3, gamma = 1.7
G_QUAD_3_2 = 0.41047416021810185


def _fd(energy, u, interior, h=1e-5):
    out = np.zeros_like(u)
    for idx in zip(*np.nonzero(interior)):
        e = np.zeros_like(u)
        e[idx] = h
        out[idx] = (energy(u + e) - energy(u - e)) / (2 * h)
    return out


def test_params_validation():
    with pytest.raises(ParameterError):
        make_params(beta=1.8, gamma=1.7)
    with pytest.raises(ParameterError):
        make_params(beta=1.0)
    with pytest.raises(ParameterError):
        make_params(gamma=2.1)
    with pytest.raises(ParameterError):
        make_params(lam=-1.0)
    with pytest.raises(ParameterError):
        make_params(stencil="diamond")


def test_theorem_compliance():
    g3 = build_grid(3, [5] * 3, [1.0] * 3)
    assert theorem_compliance(ExponentField.affine(g3, 0, 2.0, 2.4), 3)
    assert not theorem_compliance(ExponentField.affine(g3, 0, 2.0, 3.2), 3)
    g1 = build_grid(1, [5], [1.0])
    # p+ must be below N = 1, impossible for p > 1
    assert not theorem_compliance(ExponentField.constant(g1, 2.0), 1)


def test_energy_examples(rng):
    params = make_params()
    assert energy_I(params.grid.zeros(), params) == 0.0
    neg = GridFunction.clamped(params.grid, -np.abs(rng.standard_normal(params.grid.shape)))
    assert energy_I(neg, params) == pytest.approx(operator_energy(neg, params), rel=1e-15)
    assert energy_I(neg, params) > 0


def test_hat_energy():
    g = build_grid(1, [5], [1.0])
    p = ExponentField.constant(g, 2.0)
    params = ProblemParams(0.0, 1.3, 1.7, plaplace_model(p), p, g)
    u = np.array([0, 0.5, 1, 0.5, 0])
    slopes = np.diff(u) / 0.25
    oracle = 0.5 * np.sum(slopes**2 * 0.25)
    assert oracle == 2.0
    assert energy_I(u, params) == pytest.approx(oracle, rel=1e-15)


@pytest.mark.parametrize("operator", ["plaplace", "mean_curvature"])
@pytest.mark.parametrize("stencil", ["corner", "center"])
def test_residuals_match_finite_differences(operator, stencil):
    params = make_params(dim=3, n=7, operator=operator, stencil=stencil, lam=80.0)
    rng = np.random.default_rng(2)
    inner = params.interior
    for _ in range(2):
        u = np.where(inner, rng.choice([-1, 1], params.grid.shape) * rng.uniform(0.05, 1, params.grid.shape), 0)
        fd = _fd(lambda w: energy_I(w, params), u, inner)
        r = residual_I(u, params)
        assert np.linalg.norm(r - fd) / np.linalg.norm(fd) < 1e-6
        level = np.where(inner, rng.uniform(0.2, 1.0, params.grid.shape), 0)
        trunc = TruncationData(GridFunction(level, params.grid))
        w = np.where(inner, level * rng.choice([-0.5, 0.5, 1.3], params.grid.shape), 0)
        fd = _fd(lambda x: energy_J(x, params, trunc), w, inner)
        r = residual_J(w, params, trunc)
        assert np.linalg.norm(r - fd) / np.linalg.norm(fd) < 1e-6


def test_zero_is_critical():
    params = make_params()
    assert not np.any(residual_I(params.grid.zeros(), params))


def test_residual_affine_in_lambda(rng):
    p1 = make_params(lam=10.0)
    p2 = p1.with_lambda(20.0)
    u = GridFunction.clamped(p1.grid, rng.uniform(0, 2, p1.grid.shape))
    react = p1.node_weights * (u.values**0.7 - u.values**0.3)
    react[~p1.interior] = 0
    np.testing.assert_allclose(residual_I(u, p2) - residual_I(u, p1), -10.0 * react, atol=1e-13)
    assert energy_I(u, p1.with_lambda(0.0)) == pytest.approx(operator_energy(u, p1))


def test_truncation_branches():
    b, g = 1.3, 1.7
    assert truncation_g(-0.5, 2.0, b, g) == 0.0 and truncation_G(-0.5, 2.0, b, g) == 0.0
    assert truncation_G(0.0, 2.0, b, g) == 0.0
    # continuity and C1 at t = u1
    for lv in (0.3, 1.0, 2.0):
        eps = 1e-7
        assert truncation_g(lv - 1e-12, lv, b, g) == pytest.approx(truncation_g(lv + 1e-12, lv, b, g), abs=1e-10)
        slope_l = (truncation_G(lv, lv, b, g) - truncation_G(lv - eps, lv, b, g)) / eps
        slope_r = (truncation_G(lv + eps, lv, b, g) - truncation_G(lv, lv, b, g)) / eps
        assert slope_l == pytest.approx(slope_r, abs=1e-6)
    with pytest.raises(ValueError):
        truncation_g(1.0, -0.1, b, g)


def test_truncation_G_example():
    closed = 2**1.7 / 1.7 - 2**1.3 / 1.3 + (2**0.7 - 2**0.3)
    assert truncation_g(3.0, 2.0, 1.3, 1.7) == pytest.approx(2**0.7 - 2**0.3, rel=1e-15)
    assert truncation_G(3.0, 2.0, 1.3, 1.7) == pytest.approx(closed, rel=1e-15)
    assert abs(truncation_G(3.0, 2.0, 1.3, 1.7) - G_QUAD_3_2) < 1e-8


@given(st.floats(-1, 5), st.floats(0, 4), st.floats(1.05, 1.5), st.floats(1.55, 1.95))
def test_G_is_primitive_of_g(t, lv, b, g):
    pts = [lv] if 0 < lv < t else None
    ref, _ = quad(lambda s: truncation_g(s, lv, b, g), 0, max(t, 0), points=pts, epsabs=1e-13, limit=200)
    assert truncation_G(t, lv, b, g) == pytest.approx(ref, abs=1e-8)


def test_J_equals_I_on_order_interval(rng):
    params = make_params(dim=3, n=6)
    level = GridFunction.clamped(params.grid, rng.uniform(0, 3, params.grid.shape))
    trunc = TruncationData(level)
    assert energy_J(params.grid.zeros(), params, trunc) == 0.0
    for _ in range(20):
        u = rng.random(params.grid.shape) * level.values
        i, j = energy_I(u, params), energy_J(u, params, trunc)
        assert abs(i - j) <= 1e-12 * abs(i)


def test_truncation_rejects_negative_level():
    g = build_grid(1, [5], [1.0])
    with pytest.raises(ValueError):
        TruncationData(GridFunction(np.array([0, -1e-6, 0.1, 0.2, 0]), g))


@pytest.mark.parametrize("operator", ["plaplace", "mean_curvature"])
def test_operator_energy_convex(operator, rng):
    params = make_params(operator=operator)
    for _ in range(10):
        u, v = rng.standard_normal((2,) + params.grid.shape) * rng.uniform(0.1, 10)
        for th in (0.25, 0.5, 0.75):
            mix = operator_energy(th * u + (1 - th) * v, params)
            assert mix <= th * operator_energy(u, params) + (1 - th) * operator_energy(v, params) + 1e-10


def test_uniform_convexity_at_functional_level(rng):
    params = make_params()
    k = check_hypotheses(params.operator, params.p, params.grid, 10_000).k
    for _ in range(20):
        u, v = rng.standard_normal((2,) + params.grid.shape) * rng.uniform(0.1, 10)
        gap = 0.5 * operator_energy(u, params) + 0.5 * operator_energy(v, params) - operator_energy(0.5 * (u + v), params)
        assert gap >= k * gradient_modular(u - v, params) - 1e-10


def test_coercive_along_rays(rng):
    params = make_params(lam=200.0)
    u = GridFunction.clamped(params.grid, rng.uniform(0, 1, params.grid.shape))
    ts = np.geomspace(1, 1e4, 40)
    vals = np.array([energy_I(t * u.values, params) for t in ts])
    tail = vals[np.argmin(vals):]
    assert np.all(np.diff(tail) > 0) and vals[-1] > 0


@given(st.integers(0, 2**32 - 1))
def test_energy_change_resolves_second_order(seed):
    # (change - <r, step>) / eps^2 tends to d'Hd/2; it must stay stable down to
    # eps = 1e-9, where subtracting two energies would be pure roundoff
    params = make_params(lam=60.0)
    rng = np.random.default_rng(seed)
    u = np.where(params.interior, rng.uniform(0.1, 2.0, params.grid.shape), 0)
    d = np.where(params.interior, rng.standard_normal(params.grid.shape), 0)
    trunc = TruncationData(GridFunction(np.where(params.interior, u * 1.5, 0), params.grid))
    for change, r in (
        (lambda v: energy_change_I(u, v, params), residual_I(u, params)),
        (lambda v: energy_change_J(u, v, params, trunc), residual_J(u, params, trunc)),
    ):
        q = []
        for e in (1e-5, 1e-7, 1e-9):
            v = u + e * d
            q.append((change(v) - float(np.vdot(r, v - u))) / e**2)  # the rounded step, not e * d
        assert q[1] == pytest.approx(q[0], rel=1e-3)
        assert q[2] == pytest.approx(q[0], rel=1e-2)


def test_energy_change_large_steps(rng):
    params = make_params(lam=60.0)
    u, v = (np.where(params.interior, rng.standard_normal(params.grid.shape), 0) for _ in range(2))
    assert energy_change_I(u, v, params) == pytest.approx(energy_I(v, params) - energy_I(u, params), rel=1e-12)
    trunc = TruncationData(GridFunction(np.where(params.interior, np.abs(u), 0), params.grid))
    assert energy_change_J(u, v, params, trunc) == pytest.approx(
        energy_J(v, params, trunc) - energy_J(u, params, trunc), rel=1e-12
    )


def test_lagged_metric_spd(rng):
    params = make_params(lam=60.0)
    u = np.where(params.interior, rng.standard_normal(params.grid.shape), 0)
    M = lagged_metric(u, params)
    assert abs(M - M.T).max() <= 1e-14 * abs(M).max()
    assert spla.eigsh(M, k=1, which="SA", return_eigenvectors=False)[0] > 0
    # quadratic case: the operator part is the stiffness matrix, independent of u
    p2 = make_params(lo=2.0, hi=2.0 + 1e-300, gamma=1.7)
    K1 = lagged_metric(u, p2, reaction=False)
    K2 = lagged_metric(2 * u + 1, p2, reaction=False)
    assert abs(K1 - K2).max() <= 1e-12 * abs(K1).max()


def test_relax_dead_core_reduces_residual():
    params = make_params(lam=300.0)
    g = params.grid
    u = np.zeros(g.shape)
    u[2:5, 2:5] = 1.0
    u[1, 3] = 1e-13  # a node inside the dead core with a tiny positive value
    v = relax_dead_core(u, params)
    assert np.all(v[u != 1e-13] == u[u != 1e-13])
    assert abs(residual_I(v, params)[1, 3]) <= abs(residual_I(u, params)[1, 3])


def test_lambda1_quadratic_1d():
    g = build_grid(1, [65], [1.0])
    p = ExponentField.constant(g, 2.0)
    est = lambda1_estimate(p, g)
    assert est >= LAMBDA1_DENSE_65 * (1 - 1e-12)
    assert est == pytest.approx(LAMBDA1_DENSE_65, rel=1e-6)
    assert est == pytest.approx(np.pi**2 / 2, rel=1e-3)


def test_lambda1_positive_and_refinement():
    coarse = build_grid(1, [17], [1.0])
    fine = build_grid(1, [33], [1.0])
    pc = ExponentField.affine(coarse, 0, 2.0, 2.4)
    pf = ExponentField.affine(fine, 0, 2.0, 2.4)
    est_c, uc = lambda1_estimate(pc, coarse, return_minimizer=True)
    est_f = lambda1_estimate(pf, fine)
    assert est_c > 0 and est_f > 0
    # the coarse minimizer, interpolated, is admissible on the fine grid
    interp = np.interp(fine.axes()[0], coarse.axes()[0], uc.values)
    fine_params = make_params(dim=1, n=33, lo=2.0, hi=2.4)
    assert est_f <= rayleigh_ratio(interp, fine_params) * (1 + 1e-9)

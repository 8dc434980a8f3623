import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad

from holotorsion import _poly
from holotorsion import torus as tm
from holotorsion.algebra import GeneratorSpace, extract_da_dabar
from holotorsion.chern_weil import CurvatureData, FormMatrix, realify, todd
from holotorsion.mehler import MehlerParams, formal_coeffs, mehler_eval
from holotorsion.parametrix import (CutoffSpec, ModelGeometry, ParamConnection, approximate_kernel,
                                    assemble_J0, dyson_transport, error_order_fit,
                                    exact_flat_kernel, exact_flat_trace, field_max,
                                    flat_rescaled_operator, limit_operator, phi_recursion,
                                    rescaled_kernel_at_origin, sup_errors,
                                    theta_dot_from_hermitian)

seeds = st.integers(0, 2 ** 32 - 1)


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return a + a.conj().T


def complex_structure(n):
    J = np.zeros((2 * n, 2 * n))
    for i in range(n):
        J[2 * i + 1, 2 * i], J[2 * i, 2 * i + 1] = 1.0, -1.0
    return J


# -- geometry ------------------------------------------------------------------

def test_geometry_basics():
    g = ModelGeometry.flat_torus(0.5 + 1.5j, 2.0)
    assert abs(g.volume - 3.0) < 1e-14
    assert abs(ModelGeometry.circle(3.0).volume - 3.0) < 1e-15
    sq = ModelGeometry.square_torus(2.0, 3)
    assert abs(sq.injectivity_radius - 1.0) < 1e-15
    prod = ModelGeometry.product(ModelGeometry.circle(2.0), ModelGeometry.flat_torus())
    assert prod.dims == 3 and abs(prod.volume - 2.0) < 1e-14
    d = sq.displacement([1.9, 0.1, -3.9], [0.0, 0.0, 0.0])
    assert np.allclose(d, [-0.1, 0.1, 0.1])
    with pytest.raises(ValueError):
        ModelGeometry.flat_torus(1 - 1j)
    with pytest.raises(ValueError):
        ModelGeometry("flat-torus", [[1.0, 2.0], [2.0, 4.0]])


def test_cutoff_profile():
    c = CutoffSpec(2.0)
    s = np.linspace(0, 5, 501)
    prof = c.profile(s)
    assert np.all(prof[s <= 1.0] == 1.0) and np.all(prof[s >= 4.0] == 0.0)
    assert np.all(np.diff(prof) <= 0)
    with pytest.raises(ValueError):
        CutoffSpec(0.0)


# -- exact kernel --------------------------------------------------------------

def test_poisson_summation_against_spectrum():
    cfg = tm.TorusConfig.single(0.3 + 1.1j, 1.4, 0.3, 0.7)
    geom = cfg.geometry()
    for t in np.linspace(0.1, 2.0, 9):
        img = exact_flat_trace(geom, t, (0.3, 0.7))
        eig = tm.heat_trace(cfg, 2 * t, "eigen")
        assert abs(img - eig) < 1e-12


def test_exact_kernel_twisted_periodicity():
    g = ModelGeometry.flat_torus(0.2 + 1.3j)
    alpha = (0.25, 0.6)
    x, y = np.array([0.3, 0.4]), np.array([0.1, -0.2])
    base = exact_flat_kernel(g, 0.4, x, y, alpha)
    for k in ([1, 0], [0, 1], [2, -1]):
        shifted = exact_flat_kernel(g, 0.4, x + g.lattice @ np.array(k), y, alpha)
        # image sum of chi(k) q(x - y + L k): translating x by L k multiplies by chi(-k)
        phase = np.exp(-2j * math.pi * np.dot(alpha, k))
        assert abs(shifted[0, 0] - phase * base[0, 0]) < 1e-13


def test_untwisted_trace_small_time_is_volume():
    g = ModelGeometry.flat_torus(0.1 + 1.2j, 1.5)
    t = 0.01
    assert abs(exact_flat_trace(g, t) * (4 * math.pi * t) - g.volume) < 1e-12


# -- transport and coefficients -----------------------------------------------

def test_dyson_transport_second_order_against_quadrature():
    sp = GeneratorSpace(0, n_theta=2)
    rng = np.random.default_rng(3)
    M1, M2, M3 = rng.normal(size=(3, 2, 2))
    lift = lambda k, M: np.vectorize(lambda v: sp.theta(k, v), otypes=[object])(M)
    # omega_1 = theta1 (M1 + M2 x1), omega_2 = theta2 M3 x2^2
    om = [{(0, 0): lift(1, M1), (1, 0): lift(1, M2)}, {(0, 2): lift(2, M3)}]
    conn = ParamConnection(2, 2, om, {}, sp)
    x, y, s = np.array([0.7, -0.4]), np.array([0.1, 0.2]), 0.8
    A = dyson_transport(conn, x, y, s)
    z = x - y
    w1 = lambda t: (M1 + M2 * (y + t * z)[0]) * z[0]
    w2 = lambda t: M3 * (y + t * z)[1] ** 2 * z[1]
    ref = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ref[i, j] = dblquad(lambda t1, t2: (w1(t2) @ w2(t1) - w2(t2) @ w1(t1))[i, j],
                                0, s, 0, lambda t2: t2)[0]
    got = np.array([[A[i, j].coefficient((0, 1)) for j in range(2)] for i in range(2)])
    assert np.max(np.abs(got - ref)) < 1e-12
    # nilpotency of the holonomy
    D = A - conn.identity()
    assert all(not v for v in (D @ D @ D).ravel())


def test_phi0_on_diagonal_is_identity():
    rng = np.random.default_rng(4)
    B = rng.normal(size=(2, 2))
    B = B - B.T
    conn = ParamConnection.linear([[np.eye(2) * B[i, j] / 4 for j in range(2)] for i in range(2)],
                                  rho=rng.normal(size=(2, 2)))
    ph = phi_recursion(conn, None, None, 2)
    assert np.max(np.abs(np.asarray(ph(0, np.zeros(2)), dtype=complex) - np.eye(2))) < 1e-15


def test_constant_potential_coefficients():
    g = ModelGeometry.square_torus(2 * math.pi, 2)
    ph = phi_recursion(ParamConnection.constant(2, 1, rho=[[1.0]]), g, None, 4)
    z = np.array([0.3, 0.2])
    for i in range(5):
        assert abs(complex(np.asarray(ph(i, z)).ravel()[0]) - (-1) ** i / math.factorial(i)) < 1e-12


@settings(max_examples=5, deadline=None)
@given(seeds)
def test_linear_connection_reproduces_oscillator_coefficients(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(2, 2))
    B = B - B.T
    L = rng.normal(size=(2, 2))
    conn = ParamConnection.linear([[np.eye(2) * B[i, j] / 4 for j in range(2)] for i in range(2)],
                                  rho=L)
    ph = phi_recursion(conn, None, None, 4)
    fc = formal_coeffs(MehlerParams.numeric(B, L), 4)
    for k in range(5):
        for key in set(ph.phis[k]) | set(fc.P[k]):
            diff = np.asarray(ph.phis[k].get(key, 0)) - np.asarray(fc.P[k].get(key, 0))
            assert np.max(np.abs(diff)) < 1e-12


# -- parametrix error ----------------------------------------------------------

def test_error_order_constant_potential():
    g = ModelGeometry.square_torus(2 * math.pi, 2)
    conn = ParamConnection.constant(2, 1, rho=[[1.0]])
    slope = error_order_fit(conn, g, 2, np.geomspace(1e-3, 2e-2, 6), cutoff=CutoffSpec(3.0))
    assert slope >= 2 - 1 + 0.8


def test_error_order_sentinel_for_exact_parametrix():
    g = ModelGeometry.square_torus(2 * math.pi, 2)
    slope = error_order_fit(ParamConnection.constant(2, 1), g, 2, np.geomspace(1e-3, 2e-2, 5),
                            cutoff=CutoffSpec(3.0))
    assert slope == math.inf


def test_parametrix_argument_errors():
    g = ModelGeometry.square_torus(2.0, 2)
    conn = ParamConnection.constant(2, 1, rho=[[1.0]])
    with pytest.raises(ValueError):
        approximate_kernel(conn, g, 2, 0.1, [0, 0], [0, 0], CutoffSpec(1.5))
    with pytest.raises(ValueError):
        approximate_kernel(conn, g, 0, 0.1, [0, 0], [0, 0], CutoffSpec(0.5))
    with pytest.raises(ValueError):
        error_order_fit(conn, g, 2, [0.1, 0.2, 0.3])
    lin = ParamConnection.linear([[np.eye(1) * 0.0, np.eye(1)], [-np.eye(1), np.eye(1) * 0.0]])
    with pytest.raises(ValueError):
        sup_errors(lin, g, 2, [0.01])


# -- rescaled limit ------------------------------------------------------------

@settings(max_examples=10, deadline=None)
@given(seeds)
def test_theta_dot_trace_consistency(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    U = random_hermitian(rng, n)
    th = theta_dot_from_hermitian(U)
    J = complex_structure(n)
    total = sum(e @ th @ (J @ e) for e in np.eye(2 * n))
    assert abs(total - 2 * np.trace(U).real) < 1e-12


def test_zero_curvature_gives_zero_oscillator():
    sp = GeneratorSpace(4, has_da_dabar=True)
    cd = CurvatureData(FormMatrix.zeros(sp, 2), FormMatrix.zeros(sp, 1), FormMatrix.zeros(sp, 2),
                       np.zeros((4, 4)))
    p = assemble_J0(cd, 0.5)
    assert all(not p.B[i, j] for i in range(4) for j in range(4))
    assert not p.L[0, 0]


def test_rescaled_kernel_at_origin_is_eps_independent_for_scaling_kernel():
    sp = GeneratorSpace(2)
    kernel = lambda s: (sp.one() + sp.monomial((1, 2), s)) * (1 / s)
    for eps in (1.0, 0.3, 0.01):
        r = rescaled_kernel_at_origin(kernel, eps, 0.7, 1)
        assert (r - sp.one(1 / 0.7) - sp.monomial((1, 2))).max_abs() < 1e-12


def test_limit_kernel_is_todd_of_shifted_curvature():
    rng = np.random.default_rng(5)
    n = 2
    sp = GeneratorSpace(2 * n, has_da_dabar=True)
    H = rng.normal(size=(2, n, n)) + 1j * rng.normal(size=(2, n, n))
    H = H - np.conj(np.transpose(H, (0, 2, 1)))
    w1 = sp.frame(1) * sp.frame(2)
    w2 = sp.frame(3) * sp.frame(4) + sp.frame(1) * sp.frame(3)
    Rp = FormMatrix([[w1 * complex(H[0, i, j]) + w2 * complex(H[1, i, j]) for j in range(n)]
                     for i in range(n)], sp)
    U = random_hermitian(rng, n)
    th = theta_dot_from_hermitian(U)
    dd = sp.da() * sp.dabar()
    ref = todd(Rp + FormMatrix([[dd * complex(-U[i, j]) for j in range(n)] for i in range(n)], sp))
    good = CurvatureData(Rp, FormMatrix.zeros(sp, 1), FormMatrix.from_numeric(sp, U), th,
                         riemann=realify(Rp))
    val = mehler_eval(1.0, np.zeros(2 * n), assemble_J0(good, 1.0)).value[0, 0]
    assert (val * (4 * math.pi) ** n - ref).max_abs() < 1e-12
    # the opposite orientation of the Riemann tensor does not reproduce td
    bad = CurvatureData(Rp, FormMatrix.zeros(sp, 1), FormMatrix.from_numeric(sp, U), th,
                        riemann=realify(Rp) * -1)
    val = mehler_eval(1.0, np.zeros(2 * n), assemble_J0(bad, 1.0)).value[0, 0]
    assert (val * (4 * math.pi) ** n - ref).max_abs() > 1e-3


def test_flat_limit_da_dabar_part():
    rng = np.random.default_rng(6)
    n, t = 2, 0.3
    sp = GeneratorSpace(2 * n, has_da_dabar=True)
    U = random_hermitian(rng, n)
    cd = CurvatureData(FormMatrix.zeros(sp, n), FormMatrix.zeros(sp, 1),
                       FormMatrix.from_numeric(sp, U), theta_dot_from_hermitian(U))
    v = mehler_eval(t, np.zeros(2 * n), assemble_J0(cd, t)).value[0, 0] * (4 * math.pi * t) ** n
    assert abs(extract_da_dabar(v).scalar_part() - np.trace(U).real / 2) < 1e-12


def test_conjugated_operator_converges_linearly():
    rng = np.random.default_rng(7)
    n, t = 2, 0.3
    sp = GeneratorSpace(2 * n, has_da_dabar=True)
    U = random_hermitian(rng, n)
    th = theta_dot_from_hermitian(U)
    cd = CurvatureData(FormMatrix.zeros(sp, n), FormMatrix.zeros(sp, 1),
                       FormMatrix.from_numeric(sp, U), th)
    J0 = limit_operator(assemble_J0(cd, t), t)
    f = {(0, 0, 0, 0): sp.one(), (1, 0, 0, 0): sp.frame(2), (0, 1, 1, 0): sp.frame(1) * sp.frame(3)}
    conj, raw = [], []
    for eps in (0.5, 0.25, 0.125, 0.0625):
        ref = _poly.scale(J0(f), -1)
        conj.append(field_max(_poly.add(flat_rescaled_operator(th, t, eps)(f), ref)))
        raw.append(field_max(_poly.add(flat_rescaled_operator(th, t, eps, conjugate=False)(f), ref)))
    for a, b in zip(conj, conj[1:]):
        assert abs(b / a - 0.5) < 0.1
    # without conjugation the rescaled operator has a pole in eps
    assert raw[-1] > raw[0] > conj[0]

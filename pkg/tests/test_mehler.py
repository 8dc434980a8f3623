import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from holotorsion.algebra import GeneratorSpace
from holotorsion.chern_weil import FormMatrix, _exp_scalar
from holotorsion.mehler import (MehlerParams, closed_form_taylor, formal_coeffs, heat_residual,
                                mehler_eval)

seeds = st.integers(0, 2 ** 32 - 1)


def gaussian(u, x):
    x = np.atleast_1d(x)
    return (4 * math.pi * u) ** (-len(x) / 2) * math.exp(-float(x @ x) / (4 * u))


def random_params(rng, n=2, m=2, antisymmetric=False, scale=0.6):
    B = rng.normal(size=(n, n)) * scale
    if antisymmetric:
        B = B - B.T
    L = rng.normal(size=(m, m)) * scale
    a0 = rng.normal(size=(m, m))
    return MehlerParams.numeric(B, L, a0)


def poly_diff(a, b):
    return max((float(np.max(np.abs(np.asarray(a.get(k, 0)) - np.asarray(b.get(k, 0)))))
                for k in set(a) | set(b)), default=0.0)


def test_zero_data_is_gaussian():
    p = MehlerParams.numeric(np.zeros((2, 2)))
    for u, x in [(0.3, [0.0, 0.0]), (1.7, [0.4, -1.1])]:
        v = mehler_eval(u, x, p).value
        assert abs(v[0, 0] - gaussian(u, np.array(x))) < 1e-15


def test_potential_only_factorizes():
    rng = np.random.default_rng(0)
    L = rng.normal(size=(3, 3))
    a0 = rng.normal(size=(3, 3))
    p = MehlerParams.numeric(np.zeros((2, 2)), L, a0)
    u, x = 0.9, np.array([0.2, 0.5])
    ref = gaussian(u, x) * linalg.expm(-u * L) @ a0
    assert np.max(np.abs(mehler_eval(u, x, p).value - ref)) < 1e-13


def test_nilpotent_rotation_matches_series_oracle():
    # D = theta * rotation generator with theta a nilpotent 2-form; theta^3 = 0 in four generators
    sp = GeneratorSpace(4)
    th = sp.monomial((1, 2)) + sp.monomial((3, 4))
    z = sp.one(0)
    p = MehlerParams(FormMatrix([[z, th], [-th, z]], sp), FormMatrix([[th * 2]], sp), np.eye(1))
    u, x = 0.6, np.array([0.3, -0.2])
    t2 = th * th
    # Ahat(uD) = det^(1/2)((uD/2)/sinh(uD/2)), D has eigenvalues +-i theta
    ahat = 1 + t2 * (u * u / 24)
    # (uD/2) coth(uD/2) = 1 - (u theta)^2 / 12 on both diagonal entries
    quad = (1 - t2 * (u * u / 12)) * float(x @ x)
    oracle = (1 / (4 * math.pi * u)) * ahat * _exp_scalar(quad * (-1 / (4 * u))) \
        * _exp_scalar(th * (-2 * u))
    v = mehler_eval(u, x, p).value[0, 0]
    assert (v - oracle).max_abs() < 1e-12


def test_nilpotent_transport_matches_closed_form_exactly():
    sp = GeneratorSpace(4)
    th = sp.monomial((1, 2)) + sp.monomial((3, 4)) * Fraction(1, 2)
    z = sp.one(0)
    p = MehlerParams(FormMatrix([[z, th], [-th, z]], sp), FormMatrix([[th * 2]], sp), np.eye(1))
    rec, ref = formal_coeffs(p, 4), closed_form_taylor(p, 4)
    for k in range(5):
        for key in set(rec.P[k]) | set(ref.P[k]):
            assert not (rec.P[k].get(key, 0) - ref.P[k].get(key, 0))[0, 0]


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_transport_matches_closed_form_numeric(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, n=int(rng.integers(1, 4)), m=int(rng.integers(1, 3)))
    rec, ref = formal_coeffs(p, 4), closed_form_taylor(p, 4)
    for k in range(5):
        assert poly_diff(rec.P[k], ref.P[k]) < 1e-10


def test_zero_B_coefficients():
    rng = np.random.default_rng(1)
    L = rng.normal(size=(2, 2))
    a0 = rng.normal(size=(2, 2))
    p = MehlerParams.numeric(np.zeros((2, 2)), L, a0)
    f = formal_coeffs(p, 4)
    x = rng.normal(size=2)
    for k in range(5):
        ref = np.linalg.matrix_power(-L, k) @ a0 / math.factorial(k)
        assert np.max(np.abs(f.phi(k, x) - ref)) < 1e-13


def test_leading_coefficient_is_initial_value():
    rng = np.random.default_rng(2)
    p = random_params(rng)
    assert np.max(np.abs(formal_coeffs(p, 2).phi(0, np.zeros(2)) - p.a0)) < 1e-14


def test_formal_series_approximates_kernel_at_small_time():
    rng = np.random.default_rng(3)
    p = random_params(rng)
    f = formal_coeffs(p, 4)
    x = rng.normal(size=2) * 0.3
    errs = []
    for u in (0.02, 0.01):
        series = sum(u ** k * f.phi(k, x) for k in range(5)) * gaussian(u, x)
        errs.append(np.max(np.abs(mehler_eval(u, x, p).value - series)) / gaussian(u, x))
    # truncation after u^4 leaves an O(u^5) remainder
    assert errs[0] / errs[1] > 2 ** 5 * 0.8


def test_heat_residual_examples():
    assert heat_residual(1.0, np.zeros(2), MehlerParams.numeric(np.zeros((2, 2))), 1e-3) < 1e-6
    p = MehlerParams.numeric(np.zeros((2, 2)), [[0.7]])
    assert heat_residual(1.0, np.array([0.3, 0.1]), p, 1e-3) < 1e-6


@settings(max_examples=8, deadline=None)
@given(seeds)
def test_heat_residual_second_order(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, antisymmetric=True)
    x = rng.normal(size=2) * 0.7
    ratio = heat_residual(0.8, x, p, 0.02) / heat_residual(0.8, x, p, 0.01)
    assert abs(ratio - 4) < 0.3


def test_positive_symmetric_sign_does_not_solve_heat_equation():
    rng = np.random.default_rng(4)
    B = rng.normal(size=(2, 2))
    p = MehlerParams.numeric(B + B.T)
    x = np.array([0.6, -0.4])
    good = heat_residual(0.8, x, p, 0.01)
    bad = heat_residual(0.8, x, p, 0.01, symmetric_sign=+1)
    assert good < 1e-4 and bad > 1e3 * good


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_even_in_antisymmetric_part(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    x = rng.normal(size=2)
    a = mehler_eval(0.7, x, p).value
    b = mehler_eval(0.7, x, p.negate_antisymmetric()).value
    assert np.max(np.abs(a - b)) < 1e-12


def test_semigroup_at_zero_B():
    p = MehlerParams.numeric(np.zeros((1, 1)))
    k = lambda u, x: mehler_eval(u, [x], p).value[0, 0].real
    u, v, x = 0.3, 0.5, 0.4
    conv, _ = integrate.quad(lambda y: k(u, x - y) * k(v, y), -np.inf, np.inf, epsabs=1e-13)
    assert abs(conv - k(u + v, x)) < 1e-8


def test_errors():
    p = MehlerParams.numeric(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        mehler_eval(0.0, [0, 0], p)
    with pytest.raises(ValueError):
        mehler_eval(1.0, [0, 0, 0], p)
    with pytest.raises(ValueError):
        heat_residual(0.01, [0, 0], p, 0.1)
    with pytest.raises(ValueError):
        MehlerParams.numeric(np.zeros((2, 2)), np.eye(2), np.eye(3))

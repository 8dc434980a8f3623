"""Characteristic forms from matrices of even nilpotent forms.

Every matrix function here is a Taylor series about the scalar part of the
argument; the nilpotent remainder makes the series terminate exactly.
Determinants are evaluated as ``exp(tr log f(M))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations, permutations

import numpy as np
import scipy.linalg
import sympy
from sympy.polys.domains import QQ
from sympy.polys.orderings import lex
from sympy.polys.rings import ring
from sympy.polys.ring_series import rs_exp, rs_log, rs_mul, rs_series_inversion

from .algebra import GeneratorSpace, Multivector

__all__ = [
    "FormMatrix",
    "CurvatureData",
    "ScalarSeries",
    "EXP", "LOG_TODD", "LOG_AHAT", "XCOTH",
    "mat_series",
    "todd",
    "ahat",
    "sigma_p",
    "sigma_p_newton",
    "td_p",
    "chern_char",
    "sigma_p_trace_identity_check",
    "exterior_power_derivation",
    "td_p_b_derivative",
    "transgression_form",
    "integrate_top",
    "realify",
    "QuadratureError",
]


class QuadratureError(RuntimeError):
    pass


_x = sympy.Symbol("x")


_R, _t = ring("t", QQ, lex)


def _ser_exp(prec):
    return rs_exp(_t, _t, prec)


def _sinhc_half(prec):
    """``sinh(t/2) / (t/2)`` and ``cosh(t/2)`` as truncated series."""
    sh = _R(0)
    ch = _R(0)
    for k in range(0, prec, 2):
        ch += _t ** k * QQ(1, 2 ** k * math.factorial(k))
        sh += _t ** k * QQ(1, 2 ** k * math.factorial(k + 1))
    return sh, ch


def _ser_log_todd(prec):
    e = rs_exp(_t, _t, prec + 1) - 1
    return -rs_log(e.quo_term(((1,), QQ(1))), _t, prec)


def _ser_log_ahat(prec):
    return -rs_log(_sinhc_half(prec)[0], _t, prec)


def _ser_xcoth(prec):
    sh, ch = _sinhc_half(prec)
    return rs_mul(ch, rs_series_inversion(sh, _t, prec), _t, prec)


class ScalarSeries:
    """Taylor coefficients of a scalar function.

    ``builder(prec)`` returns the exact series at 0 (a ring-series element in
    ``t``); ``expr`` gives closed-form derivatives for arguments away from 0.
    """

    TERMS = 64

    def __init__(self, name: str, expr, builder):
        self.name = name
        self.expr = expr
        self.builder = builder

    @lru_cache(maxsize=None)
    def _at_zero(self):
        ser = self.builder(self.TERMS)
        out = [Fraction(0)] * self.TERMS
        for (k,), c in ser.terms():
            if k < self.TERMS:
                out[k] = Fraction(int(c.numerator), int(c.denominator))
        return out

    @lru_cache(maxsize=None)
    def _derivative(self, k: int):
        return sympy.lambdify(_x, sympy.diff(self.expr, _x, k) / sympy.factorial(k), "cmath")

    def coeff(self, c, k: int):
        if k >= self.TERMS // 2:
            raise ValueError("series order too high")
        if not c:
            return self._at_zero()[k]
        z = complex(c)
        if abs(z) < 1.0:
            # closed-form derivatives cancel badly near 0; re-expand the series
            # at 0 (radius >= 2 pi for every series used here)
            a = self._at_zero()
            val = sum(math.comb(k + j, j) * float(a[k + j]) * z ** j
                      for j in range(self.TERMS - k))
        else:
            val = self._derivative(k)(z)
        return val if isinstance(c, complex) else val.real

    def __repr__(self):
        return f"ScalarSeries({self.name})"


EXP = ScalarSeries("exp", sympy.exp(_x), _ser_exp)
LOG_TODD = ScalarSeries("log(x/(e^x-1))", sympy.log(_x / (sympy.exp(_x) - 1)), _ser_log_todd)
LOG_AHAT = ScalarSeries("log((x/2)/sinh(x/2))", sympy.log((_x / 2) / sympy.sinh(_x / 2)),
                        _ser_log_ahat)
XCOTH = ScalarSeries("(x/2)coth(x/2)", (_x / 2) * sympy.cosh(_x / 2) / sympy.sinh(_x / 2),
                     _ser_xcoth)


class FormMatrix:
    """Square matrix of commuting (even) multivectors."""

    def __init__(self, entries, space: GeneratorSpace | None = None):
        rows = [list(r) for r in entries]
        if space is None:
            space = next(e.space for r in rows for e in r if isinstance(e, Multivector))
        self.space = space
        self.dim = len(rows)
        self.entries = tuple(tuple(e if isinstance(e, Multivector) else Multivector(space, {(): e})
                                   for e in r) for r in rows)

    @classmethod
    def zeros(cls, space, dim):
        return cls([[Multivector(space)] * dim for _ in range(dim)], space)

    @classmethod
    def identity(cls, space, dim, c=1):
        return cls([[Multivector(space, {(): c}) if i == j else Multivector(space)
                     for j in range(dim)] for i in range(dim)], space)

    @classmethod
    def from_numeric(cls, space, a, form: Multivector | None = None):
        """``a (x) form`` for a numeric matrix ``a`` (``form`` defaults to 1)."""
        form = space.one() if form is None else form
        a = np.atleast_2d(a)
        return cls([[form * _py(a[i, j]) for j in range(a.shape[1])]
                    for i in range(a.shape[0])], space)

    def __getitem__(self, ij):
        return self.entries[ij[0]][ij[1]]

    def __add__(self, other):
        return FormMatrix([[a + b for a, b in zip(ra, rb)]
                           for ra, rb in zip(self.entries, other.entries)], self.space)

    def __sub__(self, other):
        return self + other * (-1)

    def __neg__(self):
        return self * (-1)

    def __mul__(self, c):
        return FormMatrix([[a * c for a in r] for r in self.entries], self.space)

    __rmul__ = __mul__

    def __matmul__(self, other):
        n = self.dim
        out = []
        for i in range(n):
            row = []
            for j in range(n):
                acc = Multivector(self.space)
                for k in range(n):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            out.append(row)
        return FormMatrix(out, self.space)

    def __eq__(self, other):
        return isinstance(other, FormMatrix) and all(
            a == b for ra, rb in zip(self.entries, other.entries) for a, b in zip(ra, rb))

    def is_zero(self) -> bool:
        return not any(e for r in self.entries for e in r)

    def trace(self) -> Multivector:
        acc = Multivector(self.space)
        for i in range(self.dim):
            acc = acc + self.entries[i][i]
        return acc

    def map(self, f) -> "FormMatrix":
        return FormMatrix([[f(e) for e in r] for r in self.entries], self.space)

    def embed(self, space) -> "FormMatrix":
        return FormMatrix([[e.embed(space) for e in r] for r in self.entries], space)

    def block_diag(self, other) -> "FormMatrix":
        z = Multivector(self.space)
        n, m = self.dim, other.dim
        rows = [list(r) + [z] * m for r in self.entries]
        rows += [[z] * n + list(r) for r in other.entries]
        return FormMatrix(rows, self.space)

    def scalar_part(self):
        """``c`` such that the degree-0 part is ``c I``; raises otherwise."""
        c = self.entries[0][0].scalar_part()
        for i in range(self.dim):
            for j in range(self.dim):
                s = self.entries[i][j].scalar_part()
                if s != (c if i == j else 0):
                    raise ValueError("scalar part of the matrix is not a multiple of the identity")
        return c

    def __repr__(self):
        return f"FormMatrix(dim={self.dim})"


def _py(x):
    if isinstance(x, np.generic):
        return x.item()
    return x


def mat_series(f: ScalarSeries, m: FormMatrix) -> FormMatrix:
    """``f(m)`` by Taylor expansion about the scalar part ``c I`` of ``m``."""
    c = m.scalar_part()
    nil = m - FormMatrix.identity(m.space, m.dim, c) if c else m
    out = FormMatrix.identity(m.space, m.dim, f.coeff(c, 0))
    power = FormMatrix.identity(m.space, m.dim)
    k = 1
    while True:
        power = power @ nil
        if power.is_zero():
            return out
        out = out + power * f.coeff(c, k)
        k += 1
        if k > 4 * m.space.size + 4:
            raise ValueError("matrix argument is not nilpotent modulo its scalar part")


def _exp_scalar(a: Multivector) -> Multivector:
    return mat_series(EXP, FormMatrix([[a]], a.space))[0, 0]


def todd(m: FormMatrix) -> Multivector:
    """``det(m / (e^m - 1))``."""
    return _exp_scalar(mat_series(LOG_TODD, m).trace())


def ahat(m: FormMatrix) -> Multivector:
    """``det^{1/2}((m/2) / sinh(m/2))``."""
    return _exp_scalar(mat_series(LOG_AHAT, m).trace() * Fraction(1, 2))


def sigma_p(p: int, m: FormMatrix) -> Multivector:
    """Coefficient of ``t**p`` in ``det(I + t m)``: sum of principal ``p``-minors."""
    if not 0 <= p <= m.dim:
        raise ValueError(f"p={p} out of range 0..{m.dim}")
    acc = Multivector(m.space)
    for rows in combinations(range(m.dim), p):
        acc = acc + _leibniz_det(m, rows)
    return acc


def _leibniz_det(m: FormMatrix, idx) -> Multivector:
    acc = Multivector(m.space, {(): 1}) if not idx else Multivector(m.space)
    if not idx:
        return acc
    for perm in permutations(range(len(idx))):
        sign = 1
        for a in range(len(perm)):
            for b in range(a + 1, len(perm)):
                if perm[a] > perm[b]:
                    sign = -sign
        term = m.space.one(sign)
        for a, b in enumerate(perm):
            term = term * m[idx[a], idx[b]]
            if not term:
                break
        acc = acc + term
    return acc


def sigma_p_newton(p: int, m: FormMatrix) -> Multivector:
    """Same as :func:`sigma_p`, through Newton's identities on ``tr m**k``."""
    if not 0 <= p <= m.dim:
        raise ValueError(f"p={p} out of range 0..{m.dim}")
    sums = []
    power = FormMatrix.identity(m.space, m.dim)
    for _ in range(p):
        power = power @ m
        sums.append(power.trace())
    e = [m.space.one()]
    for k in range(1, p + 1):
        acc = Multivector(m.space)
        for i in range(1, k + 1):
            term = e[k - i] * sums[i - 1]
            acc = acc + (term if i % 2 else -term)
        e.append(acc * Fraction(1, k))
    return e[p]


def td_p(p: int, m: FormMatrix) -> Multivector:
    """``td(m) sigma_p(exp m)``."""
    return todd(m) * sigma_p(p, mat_series(EXP, m))


def chern_char(r_e: FormMatrix) -> Multivector:
    """``tr exp(-r_e / (2 pi i))``."""
    return mat_series(EXP, r_e * (-1 / (2j * math.pi))).trace()


def exterior_power_derivation(a: np.ndarray, p: int) -> np.ndarray:
    """Matrix of ``sum_ij a_ij w^i ^ i_{w_j}`` on ``Lambda^p(C^n)``.

    Basis: increasing ``p``-subsets in lexicographic order.
    """
    n = a.shape[0]
    basis = list(combinations(range(n), p))
    index = {s: k for k, s in enumerate(basis)}
    out = np.zeros((len(basis), len(basis)), dtype=complex)
    for col, s in enumerate(basis):
        for pos, j in enumerate(s):
            rest = s[:pos] + s[pos + 1:]
            # i_{w_j} w^s = (-1)^pos w^rest; then w^i ^ w^rest
            for i in range(n):
                if a[i, j] == 0 or i in rest:
                    continue
                new = tuple(sorted(rest + (i,)))
                sign = (-1) ** pos * (-1) ** sum(1 for r in rest if r < i)
                out[index[new], col] += sign * a[i, j]
    return out


def sigma_p_trace_identity_check(p: int, a) -> tuple[complex, complex]:
    """Both sides of ``tr_{Lambda^p} exp(<A w_i, wbar_j> w^i ^ i_{w_j}) = sigma_p(exp A)``."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    if not 0 <= p <= n:
        raise ValueError("p out of range")
    # <A w_i, wbar_j> = A_ji
    lhs = np.trace(scipy.linalg.expm(exterior_power_derivation(a.T, p)))
    char = np.poly(scipy.linalg.expm(a))      # det(x I - e^A) = sum (-1)^k sigma_k x^{n-k}
    rhs = (-1) ** p * char[p]
    return complex(lhs), complex(rhs)


def _drop_dual(a: Multivector, space: GeneratorSpace) -> Multivector:
    return Multivector(space, {k: c for k, c in a.terms.items() if all(g < space.size for g in k)})


def td_p_b_derivative(p: int, r: FormMatrix, u: FormMatrix) -> Multivector:
    """``d/db|_0 td_p(r + b u)`` via an even nilpotent parameter ``b``."""
    base = r.space
    ext = base.with_dual(1)
    b = ext.dual(ext.n_dual)
    m = r.embed(ext) + u.embed(ext).map(lambda e: e * b)
    val = td_p(p, m)
    return _drop_dual(val.strip(ext.size - 1), base)


@dataclass
class CurvatureData:
    """Curvature data of a Kahler metric at a point, in an orthonormal frame.

    ``riemann[i, j]`` is the 2-form ``1/2 R_klij e^k e^l`` and
    ``grad_theta_dot[i, j, k] = (nabla_{e_i} Theta_dot)(e_j, e_k)``; both
    default to zero.
    """

    r_plus: FormMatrix
    r_e: FormMatrix
    u_plus: FormMatrix
    theta_dot: np.ndarray
    riemann: FormMatrix | None = None
    grad_theta_dot: np.ndarray | None = None

    def __post_init__(self):
        self.theta_dot = np.asarray(self.theta_dot)
        if not np.allclose(self.theta_dot, -self.theta_dot.T):
            raise ValueError("theta_dot must be antisymmetric")
        for m in (self.r_plus, self.r_e):
            for row in m.entries:
                for e in row:
                    if e and e.frame_degrees() != {2}:
                        raise ValueError("curvature entries must be 2-forms")
        n2 = self.theta_dot.shape[0]
        if self.riemann is None:
            self.riemann = FormMatrix.zeros(self.r_plus.space, n2)
        if self.grad_theta_dot is None:
            self.grad_theta_dot = np.zeros((n2, n2, n2))

    @property
    def space(self):
        return self.r_plus.space


def transgression_form(family, p: int, tol: float = 1e-10, max_nodes: int = 256,
                       r_e: FormMatrix | None = None) -> Multivector:
    """Representative of the transgressed ``td_p`` class along a metric family.

    ``(2 pi i)^{-n} int_0^1 d/db|_0 td_p(R_l + b U_l) dl . tr exp(-R^E)``,
    with ``family(l) -> CurvatureData``.  Gauss-Legendre with the node count
    doubled until two successive values differ by less than ``tol``.
    """
    prev = None
    nodes = 4
    while nodes <= max_nodes:
        xs, ws = np.polynomial.legendre.leggauss(nodes)
        acc = None
        for x, w in zip(xs, ws):
            ell = 0.5 * (x + 1.0)
            cd = family(ell)
            val = td_p_b_derivative(p, cd.r_plus, cd.u_plus) * (0.5 * w)
            acc = val if acc is None else acc + val
        if prev is not None and (acc - prev).max_abs() < tol:
            break
        prev = acc
        nodes *= 2
    else:
        raise QuadratureError(f"transgression quadrature did not reach tol={tol} "
                              f"with {max_nodes} nodes")
    cd0 = family(0.0)
    n = acc.space.n_complex
    if r_e is None:
        r_e = cd0.r_e
    twist = mat_series(EXP, r_e * (-1)).trace()
    return acc * twist * (2j * math.pi) ** (-n)


def integrate_top(form, model) -> complex:
    """Integral of a constant-coefficient form over a flat model: top coefficient times volume."""
    if callable(form) and not isinstance(form, Multivector):
        raise ValueError("only constant-coefficient forms are supported on flat models")
    if form.space.n_frame != model.dims:
        raise ValueError("form and model dimensions differ")
    top = form.top_part().scalar_part()
    return top * model.volume


def realify(a: FormMatrix) -> FormMatrix:
    """Real ``2n x 2n`` form matrix of a complex one, in the frame ``(e_1, J e_1, ..)``."""
    sp = a.space
    n = a.dim
    rows = [[Multivector(sp)] * (2 * n) for _ in range(2 * n)]
    for i in range(n):
        for j in range(n):
            e = a[i, j]
            re = e.map_coeffs(lambda c: complex(c).real)
            im = e.map_coeffs(lambda c: complex(c).imag)
            rows[2 * i][2 * j] = re
            rows[2 * i][2 * j + 1] = -im
            rows[2 * i + 1][2 * j] = im
            rows[2 * i + 1][2 * j + 1] = re
    return FormMatrix(rows, sp)

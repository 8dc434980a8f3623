"""Heat kernel of the generalized harmonic oscillator.

The operator is ``H = -sum_i (d_i + B_ij x_j / 4)**2 + L`` acting on
``m``-vector valued functions of ``x in R^n``.  ``B`` splits into a symmetric
part ``C`` and an antisymmetric part ``D``; the kernel is

    (4 pi u)^(-n/2) Ahat(u D) exp(-x.C.x / 8) exp(-x.g(u D).x / (4u)) exp(-u L) a0

with ``g(z) = (z/2) coth(z/2)``.  Matrix entries are either numbers (numpy
arrays) or commuting nilpotent forms (:class:`FormMatrix`).

Note on the sign of the ``C`` factor: conjugating ``d_i + C_ij x_j / 4`` by
``exp(-x.C.x / 8)`` removes the symmetric part, so ``exp(-...)`` is the sign
that solves the heat equation.  :func:`heat_residual` and the transport
recursion both confirm it; ``symmetric_sign=+1`` is kept so that the
opposite convention can be evaluated and shown to fail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg

from . import _poly
from .algebra import Multivector
from .chern_weil import EXP, LOG_AHAT, XCOTH, FormMatrix, _exp_scalar, ahat, mat_series

__all__ = [
    "MehlerParams",
    "KernelValue",
    "FormalSeries",
    "mehler_eval",
    "heat_residual",
    "formal_coeffs",
    "closed_form_taylor",
]


def _is_form(a) -> bool:
    return isinstance(a, FormMatrix)


def _as_object(a) -> np.ndarray:
    """Object ndarray view of a FormMatrix (or numeric array)."""
    if isinstance(a, FormMatrix):
        out = np.empty((a.dim, a.dim), dtype=object)
        for i in range(a.dim):
            for j in range(a.dim):
                out[i, j] = a[i, j]
        return out
    return np.asarray(a)


@dataclass(frozen=True)
class MehlerParams:
    """Data of ``H = -sum (d_i + B_ij x_j/4)^2 + L`` and the initial value ``a0``.

    ``B`` is an ``n x n`` ndarray or FormMatrix, ``L`` an ``m x m`` ndarray or
    FormMatrix, ``a0`` a numeric ``m x m`` array.  Entries of ``B`` and ``L``
    are assumed to commute with one another.
    """

    B: object
    L: object
    a0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a0", np.atleast_2d(np.asarray(self.a0)))
        n = self.B.dim if _is_form(self.B) else np.shape(self.B)[0]
        m = self.L.dim if _is_form(self.L) else np.shape(self.L)[0]
        if self.a0.shape != (m, m):
            raise ValueError(f"a0 must be {m}x{m}, got {self.a0.shape}")
        if not _is_form(self.B) and np.shape(self.B) != (n, n):
            raise ValueError("B must be square")

    @classmethod
    def numeric(cls, B, L=None, a0=None):
        B = np.atleast_2d(np.asarray(B, dtype=complex))
        if L is None:
            L = np.zeros((1, 1))
        L = np.atleast_2d(np.asarray(L, dtype=complex))
        a0 = np.eye(L.shape[0]) if a0 is None else a0
        return cls(B, L, a0)

    @property
    def n(self) -> int:
        return self.B.dim if _is_form(self.B) else self.B.shape[0]

    @property
    def m(self) -> int:
        return self.L.dim if _is_form(self.L) else self.L.shape[0]

    @property
    def is_form(self) -> bool:
        return _is_form(self.B) or _is_form(self.L)

    @property
    def C(self):
        """Symmetric part of ``B``."""
        if _is_form(self.B):
            return FormMatrix([[(self.B[i, j] + self.B[j, i]) * Fraction(1, 2)
                                for j in range(self.n)] for i in range(self.n)], self.B.space)
        return 0.5 * (self.B + self.B.T)

    @property
    def D(self):
        """Antisymmetric part of ``B``."""
        if _is_form(self.B):
            return FormMatrix([[(self.B[i, j] - self.B[j, i]) * Fraction(1, 2)
                                for j in range(self.n)] for i in range(self.n)], self.B.space)
        return 0.5 * (self.B - self.B.T)

    def negate_antisymmetric(self) -> "MehlerParams":
        """Same data with ``D -> -D`` (``B -> C - D``)."""
        return MehlerParams(self.C - self.D, self.L, self.a0)


@dataclass(frozen=True)
class KernelValue:
    """``value`` is an ``m x m`` array (complex, or object of multivectors)."""

    value: np.ndarray
    u: float
    x: tuple


# ---------------------------------------------------------------- numeric

def _xcoth(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    out = np.ones_like(w)
    big = np.abs(w) > 1e-4
    out[big] = (w[big] / 2) / np.tanh(w[big] / 2)
    s = w[~big] ** 2
    out[~big] = 1 + s / 12 - s * s / 720
    return out


def _xsinh(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    out = np.ones_like(w)
    big = np.abs(w) > 1e-4
    out[big] = (w[big] / 2) / np.sinh(w[big] / 2)
    s = w[~big] ** 2
    out[~big] = 1 - s / 24 + 7 * s * s / 5760
    return out


def _numeric_antisym_functions(uD: np.ndarray):
    """``(Ahat(uD), g(uD))`` for an antisymmetric numeric matrix."""
    if not np.any(uD):
        return 1.0, np.eye(uD.shape[0])
    w, V = np.linalg.eig(uD)
    if np.linalg.cond(V) > 1e10:
        raise ValueError("antisymmetric part is not diagonalizable")
    g = (V * _xcoth(w)) @ np.linalg.inv(V)
    if np.isrealobj(uD) or np.allclose(uD.imag, 0):
        g = g.real
    # eigenvalues pair up as +-w; the square root of the determinant is the
    # product over one member of each pair (continuous from D = 0)
    order = np.argsort(-np.abs(w), kind="stable")
    used = np.zeros(len(w), dtype=bool)
    prod = 1.0 + 0j
    for i in order:
        if used[i]:
            continue
        used[i] = True
        if abs(w[i]) < 1e-14:
            continue
        cand = np.where(~used)[0]
        j = cand[np.argmin(np.abs(w[cand] + w[i]))]
        used[j] = True
        prod *= _xsinh(np.array([w[i]]))[0]
    return prod, g


def _eval_numeric(u, x, p: MehlerParams, symmetric_sign: int):
    n = p.n
    ah, g = _numeric_antisym_functions(u * p.D)
    quad = -(x @ g @ x) / (4 * u) + symmetric_sign * (x @ p.C @ x) / 8
    fiber = scipy.linalg.expm(-u * p.L) @ p.a0
    return (4 * math.pi * u) ** (-n / 2) * ah * np.exp(quad) * fiber


# ---------------------------------------------------------------- forms

def _form_expm(X: FormMatrix) -> np.ndarray:
    """``exp(X)`` for a matrix of forms; exact when ``X`` is scalar plus nilpotent."""
    try:
        return _as_object(mat_series(EXP, X))
    except ValueError:
        pass
    # general numeric part: scaling and squaring on the object matrix
    num = np.array([[complex(X[i, j].scalar_part()) for j in range(X.dim)] for i in range(X.dim)])
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(num, 1), 1e-300) / 0.25))))
    Y = _as_object(X * (1.0 / 2 ** s))
    term = _as_object(FormMatrix.identity(X.space, X.dim))
    out = term.copy()
    for k in range(1, 40):
        term = (term @ Y) * (1.0 / k)
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def _forms_of(p: MehlerParams):
    space = (p.B if _is_form(p.B) else p.L).space
    B = p.B if _is_form(p.B) else FormMatrix.from_numeric(space, p.B)
    L = p.L if _is_form(p.L) else FormMatrix.from_numeric(space, p.L)
    return space, B, L


def _quad_form(M: FormMatrix, x) -> Multivector:
    acc = Multivector(M.space)
    for i in range(M.dim):
        for j in range(M.dim):
            if x[i] and x[j]:
                acc = acc + M[i, j] * (x[i] * x[j])
    return acc


def _eval_form(u, x, p: MehlerParams, symmetric_sign: int):
    space, B, L = _forms_of(p)
    pp = MehlerParams(B, L, p.a0)
    uD = pp.D * u
    ah = ahat(uD)
    g = mat_series(XCOTH, uD)
    expo = _quad_form(g, x) * (-1.0 / (4 * u)) + _quad_form(pp.C, x) * (symmetric_sign / 8)
    scal = ah * _exp_scalar(expo) * (4 * math.pi * u) ** (-p.n / 2)
    fiber = _form_expm(L * (-u)) @ p.a0
    return np.vectorize(lambda e: scal * e, otypes=[object])(fiber)


def mehler_eval(u: float, x: Sequence[float], params: MehlerParams,
                symmetric_sign: int = -1) -> KernelValue:
    """Evaluate the closed-form kernel ``p_u(x)``.

    Parameters
    ----------
    u : float
        Time, must be positive.
    x : sequence of float
        Point of ``R^n``.
    params : MehlerParams
    symmetric_sign : {-1, +1}
        Sign in ``exp(sign * x.C.x / 8)``; ``-1`` solves the heat equation.
    """
    if not u > 0:
        raise ValueError("u must be positive")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (params.n,):
        raise ValueError(f"x must have {params.n} components")
    if params.is_form:
        val = _eval_form(u, x, params, symmetric_sign)
    else:
        val = _eval_numeric(u, x, params, symmetric_sign)
    return KernelValue(val, float(u), tuple(x))


def heat_residual(u: float, x: Sequence[float], params: MehlerParams, h: float,
                  symmetric_sign: int = -1) -> float:
    """Frobenius norm of ``(d_u + H_x) p_u(x)`` by central differences.

    Numeric parameters only.  The error of the stencil is ``O(h^2)``.
    """
    if not (u > h > 0):
        raise ValueError("need u > h > 0")
    if params.is_form:
        raise TypeError("heat_residual needs numeric B and L")
    x = np.asarray(x, dtype=float)
    n = params.n

    def p(uu, xx):
        return _eval_numeric(uu, xx, params, symmetric_sign)

    p0 = p(u, x)
    dt = (p(u + h, x) - p(u - h, x)) / (2 * h)
    a = params.B @ x / 4
    Hp = params.L @ p0
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        pp, pm = p(u, x + e), p(u, x - e)
        d2 = (pp - 2 * p0 + pm) / h ** 2
        d1 = (pp - pm) / (2 * h)
        Hp = Hp - (d2 + 2 * a[i] * d1 + (params.B[i, i] / 4 + a[i] ** 2) * p0)
    return float(np.linalg.norm(dt + Hp))


# ---------------------------------------------------------------- formal series

@dataclass
class FormalSeries:
    """``p_u(x) = q_u(x) exp(-psi(x)) sum_k u^k P_k(x)``.

    ``P`` holds polynomials (dicts exponent -> fiber matrix), ``psi`` the
    quadratic ``symmetric_sign_factor * x.C.x / 8`` so that
    ``Phi_k = exp(psi) P_k``.
    """

    P: list
    psi: dict
    n: int

    def phi(self, k: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        val = _poly.evaluate(self.P[k], x)
        if not self.psi:
            return val
        e = _poly.evaluate(self.psi, x)
        if isinstance(e, Multivector):
            w = _exp_scalar(e)
            return np.vectorize(lambda c: w * c, otypes=[object])(val)
        return np.exp(e) * val

    def poly_coeffs(self, k: int) -> dict:
        return self.P[k]


def _coeff_arrays(p: MehlerParams):
    if p.is_form:
        space, B, L = _forms_of(p)
        pp = MehlerParams(B, L, p.a0)
        return _as_object(pp.C), _as_object(pp.D), _as_object(L), p.a0.astype(object)
    return p.C, p.D, np.asarray(p.L), np.asarray(p.a0, dtype=complex)


def _quad_poly(M, n, factor) -> dict:
    out = {}
    for i in range(n):
        for j in range(n):
            c = M[i, j]
            if _poly.is_zero(c):
                continue
            k = [0] * n
            k[i] += 1
            k[j] += 1
            k = tuple(k)
            out[k] = out[k] + c * factor if k in out else c * factor
    return _poly.clean(out)


def formal_coeffs(params: MehlerParams, k_max: int) -> FormalSeries:
    """Solve the transport recursion for the formal heat solution.

    With ``p = q_u exp(-x.C.x/8) sum u^k P_k`` the heat equation becomes
    ``(k + x.grad) P_k = -Ht P_{k-1}``, ``P_0 = a0``, where ``Ht`` is the
    oscillator with ``B`` replaced by its antisymmetric part.  Each degree
    ``d`` component is divided by ``k + d``.
    """
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    n = params.n
    C, D, L, a0 = _coeff_arrays(params)
    # b_i = D_ij x_j / 4
    b = [_poly.clean({tuple(int(t == j) for t in range(n)): D[i, j] * Fraction(1, 4)
                      if params.is_form else D[i, j] / 4 for j in range(n)})
         for i in range(n)]
    bb = _poly.add(*[_poly.mul(bi, bi) for bi in b]) if n else {}
    P = [_poly.constant(n, a0)]
    for k in range(1, k_max + 1):
        prev = P[-1]
        Ht = _poly.scale(_poly.laplacian(prev, n), -1)
        for i in range(n):
            Ht = _poly.add(Ht, _poly.scale(_poly.mul(b[i], _poly.deriv(prev, i)), -2))
        Ht = _poly.add(Ht, _poly.scale(_poly.mul(bb, prev), -1), _poly.scale(prev, L))
        P.append(_poly.degree_map(Ht, lambda d, k=k: -Fraction(1, k + d)
                                  if params.is_form else -1.0 / (k + d)))
    psi = _quad_poly(C, n, Fraction(-1, 8) if params.is_form else -1 / 8)
    return FormalSeries(P, psi, n)


def _series_mul(a: list, b: list, K: int) -> list:
    out = [{} for _ in range(K + 1)]
    for i, pa in enumerate(a):
        for j, pb in enumerate(b):
            if i + j <= K and pa and pb:
                out[i + j] = _poly.add(out[i + j], _poly.mul(pa, pb))
    return out


def _series_exp(s: list, K: int, n: int, one) -> list:
    """``exp(s)`` for a u-series with vanishing constant term."""
    out = [_poly.constant(n, one)] + [{} for _ in range(K)]
    term = list(out)
    for j in range(1, K + 1):
        term = _series_mul(term, s, K)
        inv = Fraction(1, math.factorial(j))
        out = [_poly.add(o, _poly.scale(t, inv)) for o, t in zip(out, term)]
    return out


def closed_form_taylor(params: MehlerParams, k_max: int,
                       symmetric_sign: int = -1) -> FormalSeries:
    """u-Taylor coefficients of the closed-form kernel divided by ``q_u``.

    An oracle for :func:`formal_coeffs` built only from the scalar Taylor
    series of ``log Ahat`` and ``(z/2)coth(z/2)`` and of ``exp(-uL)``.
    """
    n, K = params.n, k_max
    C, D, L, a0 = _coeff_arrays(params)
    one = Fraction(1) if params.is_form else 1.0
    zero = 0 * one
    # powers of D
    pw = [np.eye(n, dtype=object if params.is_form else complex)]
    for _ in range(K + 2):
        pw.append(pw[-1] @ D)
    if params.is_form:
        pw[0] = np.vectorize(lambda v: one * v, otypes=[object])(pw[0])
    # log Ahat(uD) = sum_k l_k u^k tr D^k
    log_a = [{} for _ in range(K + 1)]
    for k in range(1, K + 1):
        lk = LOG_AHAT.coeff(0, k)
        if lk:
            tr = sum((pw[k][i, i] for i in range(n)), zero)
            log_a[k] = _poly.clean(_poly.constant(n, tr * lk * Fraction(1, 2)))
    # -(1/4u) x.(g(uD) - 1).x = -1/4 sum_k g_k u^(k-1) x.D^k.x
    gauss = [{} for _ in range(K + 1)]
    for k in range(2, K + 2):
        gk = XCOTH.coeff(0, k)
        if gk:
            gauss[k - 1] = _quad_poly(pw[k], n, gk * Fraction(-1, 4))
    scal = _series_mul(_series_exp(log_a, K, n, one), _series_exp(gauss, K, n, one), K)
    # exp(-uL) a0
    fib = [a0]
    for j in range(1, K + 1):
        fib.append((-L @ fib[-1]) * Fraction(1, j) if params.is_form else (-L @ fib[-1]) / j)
    P = []
    for k in range(K + 1):
        acc = {}
        for j in range(k + 1):
            if scal[k - j]:
                acc = _poly.add(acc, _poly.scale(scal[k - j], fib[j], left=False))
        P.append(acc)
    psi = _quad_poly(C, n, Fraction(symmetric_sign, 8) if params.is_form else symmetric_sign / 8)
    return FormalSeries(P, psi, n)

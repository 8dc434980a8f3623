"""Exterior algebra with anticommuting auxiliary parameters.

A :class:`GeneratorSpace` fixes the generators: real frame covectors
``e^1 .. e^{2n}``, auxiliary Grassmann parameters ``th_1 .. th_k``, the pair
``da, dab`` and optionally a few *even* nilpotent "dual" parameters
``b_1, b_2, ..`` (``b**2 == 0``, central) used for exact first derivatives.

A :class:`Multivector` is a finite linear combination of canonical monomials
with arbitrary scalar coefficients (``int``, :class:`fractions.Fraction`,
sympy Gaussian rationals, ``float`` or ``complex``).  Only ``+``, ``*``,
unary ``-`` and truthiness are used on coefficients, so exact inputs give
exact results.

The Clifford action on forms is the symbol action ``c(e^j) = e^j^ - i_{e_j}``;
:func:`complex_clifford` gives the model on ``Lambda(T^{*(0,1)})``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations

import numpy as np
from sympy.polys.domains import QQ_I
from sympy.polys.domains.gaussiandomains import GaussianElement

__all__ = [
    "GeneratorSpace",
    "Multivector",
    "CliffordElement",
    "wedge",
    "interior",
    "clifford_symbol",
    "clifford_product",
    "complex_clifford",
    "clifford_matrices",
    "supertrace",
    "matrix_supertrace",
    "extract_da_dabar",
    "psi_t",
    "rescale_degrees",
    "getzler_rescale",
    "mv_exp",
    "action_matrix",
    "exact_i",
    "is_exact",
]


class AlgebraError(ValueError):
    pass


def is_exact(c) -> bool:
    return isinstance(c, (int, Fraction, GaussianElement))


def exact_i():
    """The imaginary unit as an exact Gaussian rational."""
    return QQ_I(0, 1)


def _to_complex(c) -> complex:
    if isinstance(c, GaussianElement):
        return complex(float(c.x), float(c.y))
    return complex(c)


def _exact_sqrt(t):
    """sqrt(t), exact when ``t`` is a rational perfect square."""
    if isinstance(t, (int, Fraction)):
        t = Fraction(t)
        rn, rd = math.isqrt(t.numerator), math.isqrt(t.denominator)
        if rn * rn == t.numerator and rd * rd == t.denominator:
            return Fraction(rn, rd)
    return math.sqrt(t)


@dataclass(frozen=True)
class GeneratorSpace:
    """Generators of the graded algebra.

    Parameters
    ----------
    n_frame : int
        Number of real frame covectors (even).
    n_theta : int
        Number of auxiliary Grassmann parameters.
    has_da_dabar : bool
        Adds the two odd parameters ``da`` and ``dab``.
    q_cap : int, optional
        Products of more than ``q_cap`` auxiliary parameters vanish.  Defaults
        to 2 for the bare ``{da, dab}`` case and to "no truncation" otherwise.
    n_dual : int
        Number of even nilpotent parameters (not counted by ``q_cap``).
    """

    n_frame: int
    n_theta: int = 0
    has_da_dabar: bool = False
    q_cap: int | None = None
    n_dual: int = 0

    def __post_init__(self):
        if self.n_frame < 0 or self.n_frame % 2:
            raise AlgebraError("n_frame must be a non-negative even integer")
        if self.q_cap is None:
            cap = 2 if (self.has_da_dabar and self.n_theta == 0) else self.n_aux
            object.__setattr__(self, "q_cap", cap)

    @property
    def n_aux(self) -> int:
        return self.n_theta + (2 if self.has_da_dabar else 0)

    @property
    def first_dual(self) -> int:
        return self.n_frame + self.n_aux

    @property
    def size(self) -> int:
        return self.first_dual + self.n_dual

    @property
    def n_complex(self) -> int:
        return self.n_frame // 2

    def is_aux(self, g: int) -> bool:
        return self.n_frame <= g < self.first_dual

    def name(self, g: int) -> str:
        if g < self.n_frame:
            return f"e{g + 1}"
        if g < self.n_frame + self.n_theta:
            return f"th{g - self.n_frame + 1}"
        if g < self.first_dual:
            return "da" if g == self.n_frame + self.n_theta else "dab"
        return f"b{g - self.first_dual + 1}"

    # generator constructors (1-based indices as in the formulas)
    def one(self, c=1) -> "Multivector":
        return Multivector(self, {(): c})

    def frame(self, i: int, c=1) -> "Multivector":
        if not 1 <= i <= self.n_frame:
            raise AlgebraError(f"frame index {i} out of range 1..{self.n_frame}")
        return Multivector(self, {(i - 1,): c})

    def theta(self, j: int, c=1) -> "Multivector":
        if not 1 <= j <= self.n_theta:
            raise AlgebraError(f"theta index {j} out of range")
        return Multivector(self, {(self.n_frame + j - 1,): c})

    def da(self, c=1) -> "Multivector":
        if not self.has_da_dabar:
            raise AlgebraError("space has no da, dab")
        return Multivector(self, {(self.n_frame + self.n_theta,): c})

    def dabar(self, c=1) -> "Multivector":
        if not self.has_da_dabar:
            raise AlgebraError("space has no da, dab")
        return Multivector(self, {(self.n_frame + self.n_theta + 1,): c})

    def dual(self, k: int = 1, c=1) -> "Multivector":
        if not 1 <= k <= self.n_dual:
            raise AlgebraError("dual index out of range")
        return Multivector(self, {(self.first_dual + k - 1,): c})

    def with_dual(self, extra: int = 1) -> "GeneratorSpace":
        return GeneratorSpace(self.n_frame, self.n_theta, self.has_da_dabar,
                              self.q_cap, self.n_dual + extra)

    def monomial(self, frame_idx=(), c=1) -> "Multivector":
        """Wedge of frame generators given by 1-based indices, in that order."""
        out = self.one(c)
        for i in frame_idx:
            out = out * self.frame(i)
        return out

    def frame_basis(self):
        """Canonical monomials of the frame exterior algebra, by degree."""
        return [k for d in range(self.n_frame + 1)
                for k in combinations(range(self.n_frame), d)]


@lru_cache(maxsize=1 << 16)
def _mono_mul(a: tuple, b: tuple, first_dual: int):
    """Product of canonical monomials: (sign, key) or (0, None)."""
    if not a:
        return 1, b
    if not b:
        return 1, a
    if set(a).intersection(b):
        return 0, None
    inv = 0
    for x in a:
        if x >= first_dual:
            continue
        for y in b:
            if y >= x:
                break
            if y < first_dual:
                inv += 1
    return (-1 if inv & 1 else 1), tuple(sorted(a + b))


class Multivector:
    """Immutable element of the graded algebra over a :class:`GeneratorSpace`."""

    __slots__ = ("space", "terms")
    __array_priority__ = -1  # let numpy object arrays drive mixed products

    def __init__(self, space: GeneratorSpace, terms=None):
        clean = {}
        cap = space.q_cap
        for k, c in (terms or {}).items():
            if not c:
                continue
            if sum(1 for g in k if space.is_aux(g)) > cap:
                continue
            clean[k] = c
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "terms", clean)

    def __setattr__(self, *_):
        raise AttributeError("Multivector is immutable")

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Multivector):
            if other.space != self.space:
                raise AlgebraError("generator spaces differ")
            return other
        if isinstance(other, np.ndarray):
            return NotImplemented
        return Multivector(self.space, {(): other})

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return Multivector(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Multivector(self.space, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        if not isinstance(other, Multivector):
            return Multivector(self.space, {k: c * other for k, c in self.terms.items()})
        if other.space != self.space:
            raise AlgebraError("generator spaces differ")
        fd = self.space.first_dual
        out = {}
        for ka, ca in self.terms.items():
            for kb, cb in other.terms.items():
                s, k = _mono_mul(ka, kb, fd)
                if s == 0:
                    continue
                v = ca * cb if s > 0 else -(ca * cb)
                out[k] = out[k] + v if k in out else v
        return Multivector(self.space, out)

    def __rmul__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        # scalars commute with everything
        return Multivector(self.space, {k: other * c for k, c in self.terms.items()})

    def __truediv__(self, other):
        return self * (Fraction(1) / other if isinstance(other, (int, Fraction)) else 1 / other)

    def __pow__(self, k: int):
        out = self.space.one()
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Multivector):
            if isinstance(other, np.ndarray):
                return NotImplemented
            other = Multivector(self.space, {(): other})
        if other.space != self.space:
            return False
        return not (self - other).terms

    def __hash__(self):
        return hash(frozenset(self.terms))

    def __bool__(self):
        return bool(self.terms)

    # -- inspection ---------------------------------------------------------
    def frame_degree(self, key) -> int:
        return sum(1 for g in key if g < self.space.n_frame)

    def aux_degree(self, key) -> int:
        return sum(1 for g in key if self.space.is_aux(g))

    def grade(self, i: int) -> "Multivector":
        """Part of frame degree ``i``."""
        return Multivector(self.space, {k: c for k, c in self.terms.items()
                                        if self.frame_degree(k) == i})

    def aux_part(self, d: int) -> "Multivector":
        return Multivector(self.space, {k: c for k, c in self.terms.items()
                                        if self.aux_degree(k) == d})

    def frame_degrees(self) -> set:
        return {self.frame_degree(k) for k in self.terms}

    def is_even(self) -> bool:
        fd = self.space.first_dual
        return all(sum(1 for g in k if g < fd) % 2 == 0 for k in self.terms)

    def scalar_part(self):
        return self.terms.get((), 0)

    def coefficient(self, key=()):
        return self.terms.get(tuple(key), 0)

    def top_part(self) -> "Multivector":
        """Coefficient of ``e^1 ^ .. ^ e^{2n}`` as an element free of frame generators."""
        nf = self.space.n_frame
        top = tuple(range(nf))
        return Multivector(self.space, {k[nf:]: c for k, c in self.terms.items()
                                        if k[:nf] == top})

    def strip(self, g: int) -> "Multivector":
        """Left coefficient of generator index ``g``: terms of ``g * y``, returns ``y``."""
        fd = self.space.first_dual
        out = {}
        for k, c in self.terms.items():
            if g not in k:
                continue
            pos = k.index(g)
            before = sum(1 for h in k[:pos] if h < fd) if g < fd else 0
            out[k[:pos] + k[pos + 1:]] = -c if before & 1 else c
        return Multivector(self.space, out)

    def map_coeffs(self, f) -> "Multivector":
        return Multivector(self.space, {k: f(c) for k, c in self.terms.items()})

    def to_complex(self) -> "Multivector":
        return self.map_coeffs(_to_complex)

    def embed(self, space: GeneratorSpace) -> "Multivector":
        """Re-home into a space that extends this one by dual parameters."""
        src = self.space
        if (space.n_frame, space.n_theta, space.has_da_dabar) != (
                src.n_frame, src.n_theta, src.has_da_dabar) or space.n_dual < src.n_dual:
            raise AlgebraError("target space does not extend source space")
        return Multivector(space, dict(self.terms))

    def max_abs(self) -> float:
        return max((abs(_to_complex(c)) for c in self.terms.values()), default=0.0)

    def dump(self) -> str:
        """One term per line: ``coeff * g1^g2^..`` in canonical order."""
        if not self.terms:
            return "0"
        lines = []
        for k in sorted(self.terms, key=lambda k: (len(k), k)):
            name = "^".join(self.space.name(g) for g in k) or "1"
            lines.append(f"{self.terms[k]} * {name}")
        return "\n".join(lines)

    def __repr__(self):
        return f"Multivector({self.dump()!s})".replace("\n", " + ")


def wedge(a: Multivector, b: Multivector) -> Multivector:
    return a * b


def interior(v: int, a: Multivector) -> Multivector:
    """Contraction ``i_{e_v}`` (1-based ``v``), a graded derivation of degree -1."""
    sp = a.space
    if not 1 <= v <= sp.n_frame:
        raise AlgebraError(f"frame index {v} out of range 1..{sp.n_frame}")
    return a.strip(v - 1)


def clifford_symbol(v: int, a: Multivector) -> Multivector:
    """``c(e^v) a = e^v ^ a - i_{e_v} a``."""
    return a.space.frame(v) * a - interior(v, a)


def clifford_product(a: Multivector, b: Multivector) -> Multivector:
    """Symbol of the product of the quantizations of ``a`` and ``b``.

    A monomial ``e^{i1}..e^{ik} X`` (``X`` free of frame generators) acts as
    ``c(e^{i1})..c(e^{ik})`` after left multiplication by ``X``.
    """
    sp = a.space
    nf = sp.n_frame
    out = Multivector(sp)
    for k, c in a.terms.items():
        fr = [g for g in k if g < nf]
        rest = Multivector(sp, {tuple(g for g in k if g >= nf): c})
        y = rest * b
        for g in reversed(fr):
            y = clifford_symbol(g + 1, y)
        out = out + y
    return out


def mv_exp(a: Multivector) -> Multivector:
    """``exp`` of an element whose non-scalar part is nilpotent and even."""
    c = a.scalar_part()
    nil = a - c
    out = a.space.one()
    term = a.space.one()
    k = 1
    while True:
        term = term * nil
        if not term:
            break
        out = out + term * Fraction(1, math.factorial(k))
        k += 1
        if k > 4 * a.space.size + 4:
            raise AlgebraError("exp argument is not nilpotent")
    if c:
        out = out * (math.e ** c if not isinstance(c, complex) else np.exp(c))
    return out


# -- complex model on Lambda(T^{*(0,1)}) -------------------------------------
def complex_clifford(v, a: Multivector) -> Multivector:
    """Clifford action of a real tangent vector on the complex form model.

    The space of ``a`` is read as ``Lambda(T^{*(1,0)} + T^{*(0,1)})``: frame
    generator ``j`` (0-based, ``j < n``) is ``w^{j+1}``, generator ``n + j`` is
    ``wbar^{j+1}``, with ``w_j = (e_{2j-1} - i e_{2j})/sqrt 2``.  ``v`` holds
    the components of the vector in the real frame ``e_1 .. e_{2n}``.
    The action is ``sqrt2 (vbar^{(1,0),*} ^ - i_{v^{(0,1)}})`` with the
    C-bilinear metric dual.
    """
    sp = a.space
    n = sp.n_complex
    if len(v) != 2 * n:
        raise AlgebraError("vector length must equal n_frame")
    exact = all(is_exact(x) for x in v)
    iu = exact_i() if exact else 1j
    out = Multivector(sp)
    for j in range(n):
        x, y = v[2 * j], v[2 * j + 1]
        if not (x or y):
            continue
        wedge_c = x + iu * y      # sqrt2 * (coefficient of w_j in v^{(1,0)})
        inter_c = x - iu * y      # sqrt2 * (coefficient of wbar_j in v^{(0,1)})
        g = Multivector(sp, {(n + j,): 1})
        out = out + (g * a) * wedge_c - a.strip(n + j) * inter_c
    return out


def action_matrix(op, space: GeneratorSpace, basis=None) -> np.ndarray:
    """Matrix of a linear map on a span of canonical frame monomials."""
    basis = space.frame_basis() if basis is None else basis
    index = {k: i for i, k in enumerate(basis)}
    m = np.zeros((len(basis), len(basis)), dtype=object)
    m[:] = 0
    for j, k in enumerate(basis):
        img = op(Multivector(space, {k: 1}))
        for kk, c in img.terms.items():
            if kk not in index:
                raise AlgebraError("image leaves the chosen basis")
            m[index[kk], j] = c
    return m


@lru_cache(maxsize=16)
def _antiholo_basis(n: int):
    return tuple(tuple(n + j for j in s) for d in range(n + 1)
                 for s in combinations(range(n), d))


def clifford_matrices(n: int, exact: bool = False):
    """Matrices of ``c(e_1) .. c(e_{2n})`` on ``Lambda(T^{*(0,1)})`` and its grading.

    The basis is ``wbar^I`` ordered by degree then lexicographically.
    Returns ``(mats, parity)`` with ``parity[k] = (-1)**deg``.
    """
    sp = GeneratorSpace(2 * n)
    basis = list(_antiholo_basis(n))
    mats = []
    for k in range(2 * n):
        v = [0] * (2 * n)
        v[k] = 1
        m = action_matrix(lambda a, v=v: complex_clifford(v, a), sp, basis)
        if not exact:
            m = np.array([[_to_complex(c) for c in row] for row in m], dtype=complex)
        mats.append(m)
    parity = np.array([(-1) ** len(k) for k in basis])
    return mats, parity


def matrix_supertrace(m, parity) -> complex:
    return sum(parity[i] * m[i, i] for i in range(len(parity)))


@dataclass(frozen=True)
class CliffordElement:
    """Element of ``C(V*) (x) End(W)`` stored through its symbol.

    ``blocks[a][b]`` is the symbol of the ``(a, b)`` entry of the fiber
    matrix; a single multivector means ``symbol (x) Id_W``.
    """

    blocks: tuple
    w_dim: int = 1

    @classmethod
    def scalar(cls, symbol: Multivector, w_dim: int = 1) -> "CliffordElement":
        sp = symbol.space
        rows = tuple(tuple(symbol if a == b else Multivector(sp) for b in range(w_dim))
                     for a in range(w_dim))
        return cls(rows, w_dim)

    @classmethod
    def from_blocks(cls, blocks) -> "CliffordElement":
        rows = tuple(tuple(r) for r in blocks)
        return cls(rows, len(rows))

    @property
    def space(self) -> GeneratorSpace:
        return self.blocks[0][0].space

    def __mul__(self, other: "CliffordElement") -> "CliffordElement":
        w = self.w_dim
        rows = []
        for a in range(w):
            row = []
            for b in range(w):
                acc = Multivector(self.space)
                for c in range(w):
                    acc = acc + clifford_product(self.blocks[a][c], other.blocks[c][b])
                row.append(acc)
            rows.append(tuple(row))
        return CliffordElement(tuple(rows), w)


def supertrace(x, keep_aux: bool = False):
    """Supertrace on ``Lambda(T^{*(0,1)}) (x) W`` through the symbol.

    Equals ``(-2i)**n`` times the fiber trace of the coefficient of
    ``e^1 ^ .. ^ e^{2n}``.  With ``keep_aux`` the auxiliary-valued result is
    returned as a multivector; otherwise its scalar part.
    """
    if isinstance(x, Multivector):
        x = CliffordElement.scalar(x)
    sp = x.space
    n = sp.n_complex
    acc = Multivector(sp)
    for a in range(x.w_dim):
        acc = acc + x.blocks[a][a].top_part()
    exact = all(is_exact(c) for c in acc.terms.values())
    factor = QQ_I(0, -2) ** n if exact else (-2j) ** n
    acc = acc * factor
    return acc if keep_aux else acc.scalar_part()


def extract_da_dabar(a: Multivector) -> Multivector:
    """For ``eta = eta0 + da eta1 + dab eta2 + da dab eta3`` return ``eta3``."""
    sp = a.space
    if not sp.has_da_dabar:
        raise AlgebraError("space has no da, dab")
    ida = sp.n_frame + sp.n_theta
    return a.strip(ida).strip(ida + 1)


def psi_t(t, a: Multivector) -> Multivector:
    """Algebra map sending each auxiliary parameter ``x`` to ``x / sqrt(t)``."""
    if t <= 0:
        raise AlgebraError("psi_t needs t > 0")
    r = _exact_sqrt(t)
    inv = Fraction(1) / r if isinstance(r, Fraction) else 1.0 / r
    out = {}
    for k, c in a.terms.items():
        d = a.aux_degree(k)
        out[k] = c * inv ** d if d else c
    return Multivector(a.space, out)


def rescale_degrees(eps, a: Multivector) -> Multivector:
    """``sum_i eps**(-i) a_[i]`` over frame degrees ``i``."""
    inv = Fraction(1) / eps if isinstance(eps, (int, Fraction)) else 1.0 / eps
    return Multivector(a.space, {k: c * inv ** a.frame_degree(k)
                                 for k, c in a.terms.items()})


def getzler_rescale(eps, f):
    """``(delta_eps f)(t, x) = sum_i eps**(-i) f(eps**2 t, eps x)_[i]``."""
    if eps <= 0:
        raise AlgebraError("eps must be positive")

    def rescaled(t, x):
        xs = [eps * xi for xi in x]
        return rescale_degrees(eps, f(eps * eps * t, xs))

    return rescaled

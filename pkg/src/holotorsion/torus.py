"""Flat complex tori with flat line-bundle twists: spectra, zeta functions, torsion.

A factor is ``C / (Z + tau Z)`` with metric ``scale * |dz|^2`` and the flat
line bundle whose holonomy along ``m + k tau`` is ``exp(2 pi i (alpha m + beta k))``.
Twisted plane waves have frequencies ``xi`` with ``xi.(1, 0) = j + alpha`` and
``xi.(tau_x, tau_y) = k + beta``; the Kodaira Laplacian ``box = Delta / 2`` has
eigenvalue ``2 pi^2 |xi|^2 / scale`` on each of them, on every ``Omega^{p,q}``.
A product of factors has complex dimension ``n`` and eigenvalues that add.

The torsion is assembled from ``zeta_a(s) = w Z_a(s)`` where ``Z_a`` is the
scalar zeta function of ``box`` restricted to eigenvalues ``>= a`` and
``w = sum_q (-1)^q q C(n, q) C(n, p)`` (so ``w = -1`` for ``n = 1`` and
``w = 0`` for ``n >= 2``).
"""
from __future__ import annotations

import cmath
import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.special import comb, exp1, gamma

from .algebra import clifford_matrices, matrix_supertrace
from .chern_weil import (CurvatureData, FormMatrix, chern_char, exterior_power_derivation,
                         integrate_top, todd, transgression_form)
from .algebra import GeneratorSpace
from .parametrix import ModelGeometry, theta_dot_from_hermitian

__all__ = [
    "TorusFactor",
    "TorusConfig",
    "SpectrumSlice",
    "ZetaResult",
    "VariationTrace",
    "M0Fit",
    "AnomalyReport",
    "SuperOp",
    "spectrum",
    "finite_difference_spectrum",
    "heat_trace",
    "heat_supertrace_N",
    "zeta",
    "zeta_torsion",
    "epstein_torsion_log",
    "spectral_gap_cuts",
    "variation_trace",
    "a_minus1_chern_weil",
    "fiber_operators",
    "mode_operators",
    "lowest_modes",
    "d_squared_check",
    "lichnerowicz_check",
    "bismut_identity_check",
    "m0_extract",
    "fit_laurent",
    "anomaly_check",
    "modular_partner",
]

EULER_GAMMA = 0.57721566490153286061


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class TorusFactor:
    tau: complex = 1j
    scale: float = 1.0
    alpha: complex = 0.5
    beta: complex = 0.0
    nonunitary: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tau", complex(self.tau))
        if not self.tau.imag > 0:
            raise ValueError("tau must have positive imaginary part")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        a, b = complex(self.alpha), complex(self.beta)
        if self.nonunitary:
            object.__setattr__(self, "alpha", a)
            object.__setattr__(self, "beta", b)
        else:
            if a.imag or b.imag:
                raise ValueError("complex holonomy needs nonunitary=True")
            a, b = a.real, b.real
            if not (0 <= a < 1 and 0 <= b < 1):
                raise ValueError("character (alpha, beta) must lie in [0, 1)^2")
            object.__setattr__(self, "alpha", a)
            object.__setattr__(self, "beta", b)
        if abs(cmath.exp(2j * math.pi * a) - 1) < 1e-12 and abs(cmath.exp(2j * math.pi * b) - 1) < 1e-12:
            raise ValueError("trivial character: the Laplacian has a zero mode")

    @property
    def area(self) -> float:
        return self.scale * self.tau.imag

    def lattice(self) -> np.ndarray:
        r = math.sqrt(self.scale)
        return r * np.array([[1.0, self.tau.real], [0.0, self.tau.imag]])

    def eigenvalue(self, j, k):
        """``box`` eigenvalue of the mode ``(j, k)`` (complex for non-unitary twists)."""
        a = j + self.alpha
        b = (k + self.beta - a * self.tau.real) / self.tau.imag
        return 2 * math.pi ** 2 * (a * a + b * b) / self.scale

    def frequency(self, j, k) -> np.ndarray:
        """Orthonormal-frame wave vector ``k_a`` with ``nabla_{e_a} = i k_a`` on the mode."""
        a = j + self.alpha
        b = (k + self.beta - a * self.tau.real) / self.tau.imag
        return 2 * math.pi * np.array([a, b]) / math.sqrt(self.scale)


@dataclass(frozen=True)
class TorusConfig:
    """Product of flat twisted tori and a holomorphic form degree ``p``."""

    factors: tuple
    p: int = 0

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("need at least one factor")
        if not 0 <= self.p <= self.n:
            raise ValueError("p must satisfy 0 <= p <= n")

    @classmethod
    def single(cls, tau=1j, scale=1.0, alpha=0.5, beta=0.0, p=0, nonunitary=False):
        return cls((TorusFactor(tau, scale, alpha, beta, nonunitary),), p)

    @property
    def n(self) -> int:
        return len(self.factors)

    @property
    def nonunitary(self) -> bool:
        return any(f.nonunitary for f in self.factors)

    @property
    def volume(self) -> float:
        return float(np.prod([f.area for f in self.factors]))

    def scaled(self, s: float) -> "TorusConfig":
        """Metric multiplied by ``s`` on every factor."""
        return TorusConfig(tuple(replace(f, scale=f.scale * s) for f in self.factors), self.p)

    def geometry(self) -> ModelGeometry:
        g = [ModelGeometry("flat-torus", f.lattice()) for f in self.factors]
        return g[0] if len(g) == 1 else ModelGeometry.product(*g)

    def multiplicity(self, q: int) -> int:
        return int(comb(self.n, q, exact=True) * comb(self.n, self.p, exact=True))

    @property
    def n_weight(self) -> int:
        """``sum_q (-1)^q q C(n, q) C(n, p)``."""
        return sum((-1) ** q * q * self.multiplicity(q) for q in range(self.n + 1))

    def shortest_image(self) -> float:
        return min(ModelGeometry("flat-torus", f.lattice()).shortest_vector() for f in self.factors)


# ---------------------------------------------------------------- spectrum

def _factor_modes(f: TorusFactor, lmax: float):
    """All modes ``(j, k, mu)`` of one factor with ``Re mu <= lmax``."""
    r2 = lmax * f.scale / (2 * math.pi ** 2)
    if f.nonunitary:
        r2 += 4 * (abs(complex(f.alpha).imag) + abs(complex(f.beta).imag)) ** 2 + 1
    r = math.sqrt(max(r2, 0.0))
    a0 = complex(f.alpha).real
    b0 = complex(f.beta).real
    js = np.arange(math.floor(-r - a0) - 1, math.ceil(r - a0) + 2)
    out_j, out_k = [], []
    ty, tx = f.tau.imag, f.tau.real
    for j in js:
        a = j + a0
        rem = r2 - a * a
        if rem < 0:
            continue
        c = a * tx - b0
        half = ty * math.sqrt(rem)
        ks = np.arange(math.floor(c - half) - 1, math.ceil(c + half) + 2)
        out_j.append(np.full(len(ks), j))
        out_k.append(ks)
    if not out_j:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    J = np.concatenate(out_j)
    K = np.concatenate(out_k)
    mu = f.eigenvalue(J.astype(float), K.astype(float))
    keep = np.real(mu) <= lmax
    return J[keep], K[keep], mu[keep]


def _scalar_eigenvalues(config: TorusConfig, lmax: float) -> np.ndarray:
    vals = np.zeros(1)
    for f in config.factors:
        _, _, mu = _factor_modes(f, lmax)
        vals = (vals[:, None] + mu[None, :]).ravel()
        vals = vals[np.real(vals) <= lmax]
    return np.sort_complex(vals) if np.iscomplexobj(vals) else np.sort(vals)


@dataclass(frozen=True)
class SpectrumSlice:
    """Eigenvalues of ``box`` on ``Omega^{p,q}`` below ``cutoff``, grouped with multiplicities."""

    q: int
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    cutoff: float
    volume: float
    n: int
    fiber_rank: int = 1

    def tail_bound(self, t: float) -> float:
        """Upper estimate of ``sum_{mu > cutoff} mult e^{-t mu}`` from Weyl's law.

        The counting function of ``box`` is ``N(x) ~ V x^n / (2 pi)^n / n!``; the
        estimate integrates ``e^{-tx} dN`` over ``x > cutoff`` with a factor 2 margin.
        """
        if t <= 0:
            raise ValueError("t must be positive")
        n, lam = self.n, self.cutoff
        c = 2 * self.fiber_rank * self.volume / (2 * math.pi) ** n / math.factorial(n - 1)
        # int_lam^inf x^{n-1} e^{-tx} dx = e^{-t lam} sum_k (n-1)!/(n-1-k)! lam^{n-1-k} / t^{k+1}
        acc = sum(math.factorial(n - 1) / math.factorial(n - 1 - k) * lam ** (n - 1 - k) / t ** (k + 1)
                  for k in range(n))
        return float(c * acc * math.exp(-t * lam))

    def values(self) -> np.ndarray:
        """Eigenvalues repeated by multiplicity."""
        return np.repeat(self.eigenvalues, self.multiplicities)


def spectrum(config: TorusConfig, q: int, lmax: float) -> SpectrumSlice:
    """Eigenvalues of ``box`` on ``Omega^{p,q}`` up to ``lmax``."""
    if not 0 <= q <= config.n:
        raise ValueError("q out of range")
    if lmax <= 0:
        raise ValueError("lmax must be positive")
    vals = _scalar_eigenvalues(config, lmax)
    if len(vals) and np.min(np.abs(vals)) < 1e-12:
        raise ValueError("zero eigenvalue: character is trivial")
    groups, mults = [], []
    for v in vals:
        if groups and abs(v - groups[-1]) <= 1e-10 * max(1.0, abs(v)):
            mults[-1] += 1
        else:
            groups.append(v)
            mults.append(1)
    m = config.multiplicity(q)
    return SpectrumSlice(q, np.array(groups), np.array(mults, dtype=int) * m, float(lmax),
                         config.volume, config.n, m)


def finite_difference_spectrum(factor: TorusFactor, grid: int = 64, k: int = 10) -> np.ndarray:
    """Lowest ``k`` eigenvalues of a 5-point discretization of ``box`` (rectangular tori)."""
    if abs(factor.tau.real) > 1e-14 or factor.nonunitary:
        raise ValueError("grid oracle needs a rectangular lattice and a unitary twist")
    nx = grid
    ny = max(4, int(round(grid * factor.tau.imag)))
    hx = math.sqrt(factor.scale) / nx
    hy = math.sqrt(factor.scale) * factor.tau.imag / ny
    px = np.exp(2j * math.pi * factor.alpha)
    py = np.exp(2j * math.pi * factor.beta)

    def idx(a, b):
        return a * ny + b

    rows, cols, data = [], [], []
    for a in range(nx):
        for b in range(ny):
            i = idx(a, b)
            rows.append(i), cols.append(i), data.append(2 / hx ** 2 + 2 / hy ** 2)
            for da, db, h in ((1, 0, hx), (-1, 0, hx), (0, 1, hy), (0, -1, hy)):
                aa, bb = a + da, b + db
                ph = 1.0
                if aa == nx:
                    aa, ph = 0, px
                elif aa < 0:
                    aa, ph = nx - 1, np.conj(px)
                if bb == ny:
                    bb, ph = 0, py
                elif bb < 0:
                    bb, ph = ny - 1, np.conj(py)
                rows.append(i), cols.append(idx(aa, bb)), data.append(-ph / h ** 2)
    A = scipy.sparse.csc_matrix((data, (rows, cols)), shape=(nx * ny, nx * ny), dtype=complex)
    w = scipy.sparse.linalg.eigsh(A, k=k, sigma=0, which="LM", return_eigenvectors=False)
    return np.sort(w.real) / 2


# ---------------------------------------------------------------- heat traces

@lru_cache(maxsize=256)
def _image_vectors(factor: TorusFactor, radius: float):
    L = factor.lattice()
    inv = np.linalg.inv(L)
    bound = np.ceil(np.abs(inv).sum(axis=1).max() * radius) + 1
    bound = int(bound)
    ks = np.arange(-bound, bound + 1)
    M, K = np.meshgrid(ks, ks, indexing="ij")
    M, K = M.ravel(), K.ravel()
    g = L @ np.vstack([M, K])
    d2 = (g ** 2).sum(axis=0)
    keep = d2 <= radius ** 2
    chi = np.exp(2j * math.pi * (factor.alpha * M[keep] + factor.beta * K[keep]))
    return d2[keep], chi


def _factor_trace_image(f: TorusFactor, t: float) -> complex:
    # box = Delta/2: Theta_box(t) = Theta_Delta(t/2) = A/(2 pi t) sum chi e^{-|g|^2/(2t)}
    radius = math.sqrt(2 * t * 40.0) + 1e-9
    d2, chi = _image_vectors(f, round(radius, 6))
    val = np.sum(chi * np.exp(-d2 / (2 * t)))
    return f.area / (2 * math.pi * t) * val


def _factor_trace_eigen(f: TorusFactor, t: float) -> complex:
    lmax = 40.0 / t + 40.0
    _, _, mu = _factor_modes(f, lmax)
    return np.sum(np.exp(-t * mu))


def heat_trace(config: TorusConfig, t: float, method: str = "auto") -> complex:
    """Scalar trace ``sum exp(-t mu)`` of ``box`` (one copy per mode)."""
    if t <= 0:
        raise ValueError("t must be positive")
    if method == "auto":
        method = "image" if t < 1.0 else "eigen"
    fn = {"image": _factor_trace_image, "eigen": _factor_trace_eigen}[method]
    val = 1.0 + 0j
    for f in config.factors:
        val *= fn(f, t)
    return val if config.nonunitary else val.real


def heat_supertrace_N(config: TorusConfig, t: float, method: str = "auto") -> complex:
    """``tr_s[N exp(-t box)] = sum_q (-1)^q q C(n,q) C(n,p) Theta(t)``."""
    return config.n_weight * heat_trace(config, t, method)


# ---------------------------------------------------------------- zeta functions

@dataclass(frozen=True)
class ZetaResult:
    zeta0: complex
    zeta0_prime: complex
    small_factor: complex
    torsion_log: complex
    err: float
    a: float = 0.0
    log_small: complex = 0.0


def _small_eigenvalues(config: TorusConfig, a: float) -> np.ndarray:
    vals = _scalar_eigenvalues(config, a + 1.0)
    if len(vals) and np.min(np.abs(np.real(vals) - a)) < 1e-9:
        raise ValueError("cut a is within 1e-9 of an eigenvalue")
    return vals[np.real(vals) < a]


def spectral_gap_cuts(config: TorusConfig, count: int = 3) -> list:
    """Midpoints of the first ``count`` spectral gaps, starting below the lowest eigenvalue."""
    lmax = 50.0
    while True:
        vals = np.unique(np.round(np.real(_scalar_eigenvalues(config, lmax)), 9))
        if len(vals) > count:
            break
        lmax *= 2
    edges = np.concatenate([[0.0], vals[:count]])
    return [float(0.5 * (a + b)) for a, b in zip(edges[:-1], edges[1:])]


def _window(config: TorusConfig, small: np.ndarray):
    d = config.shortest_image()
    t_max = min(d * d / 60.0, 0.05)
    if len(small):
        t_max = min(t_max, 0.05 / float(np.max(np.abs(small))))
    return t_max / 20.0, t_max


def fit_laurent(ts: np.ndarray, ys: np.ndarray, j_min: int, j_max: int, t_ref: float | None = None):
    """Least-squares fit of ``sum_{j=j_min}^{j_max} c_j t^j``.

    Returns ``(coeffs dict, max residual, condition number)``; the basis is
    scaled by ``t_ref`` for conditioning.
    """
    ts = np.asarray(ts, dtype=float)
    t_ref = t_ref or float(ts.max())
    js = np.arange(j_min, j_max + 1)
    V = (ts[:, None] / t_ref) ** js[None, :]
    coef, *_ = np.linalg.lstsq(V, ys, rcond=None)
    resid = float(np.max(np.abs(V @ coef - ys)))
    cond = float(np.linalg.cond(V))
    return {int(j): c / t_ref ** j for j, c in zip(js, coef)}, resid, cond


def _theta_cut(config, small, t):
    return heat_trace(config, t, "image") - np.sum(np.exp(-t * small))


def _log_quad(f, lo: float, hi: float, panels: int = 12, nodes: int = 24):
    """``int_lo^hi f(t) dt / t`` by composite Gauss-Legendre in ``log t``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(math.log(lo), math.log(hi), panels + 1)
    acc = 0.0
    for u0, u1 in zip(edges[:-1], edges[1:]):
        us = 0.5 * (u1 - u0) * x + 0.5 * (u1 + u0)
        acc = acc + 0.5 * (u1 - u0) * sum(wi * f(math.exp(ui)) for ui, wi in zip(us, w))
    return acc


def _mellin_parts(config: TorusConfig, a: float, n_fit: int = 160, j_max: int = 6):
    small = _small_eigenvalues(config, a)
    t_lo, t0 = _window(config, small)
    ts = np.geomspace(t_lo, t0, n_fit)
    ys = np.array([_theta_cut(config, small, t) for t in ts])
    coef, resid, cond = fit_laurent(ts, ys, -config.n, j_max)
    big = _large_eigenvalues(config, a)
    return small, t0, coef, resid, cond, big


def _large_eigenvalues(config: TorusConfig, a: float) -> np.ndarray:
    vals = _scalar_eigenvalues(config, 60.0 + a)
    return vals[np.real(vals) > a]


def _zeta_scalar_prime(config: TorusConfig, a: float):
    """``(Z_a(0), Z_a'(0), err)`` by the Mellin transform of the cut heat trace."""
    small, t0, c, resid, cond, big = _mellin_parts(config, a)
    # int_{t0}^1 Theta_a dt/t, then int_1^inf = sum E1(mu)
    inner = _log_quad(lambda t: _theta_cut(config, small, t), t0, 1.0)
    inner2 = _log_quad(lambda t: _theta_cut(config, small, t), t0, 1.0, panels=24)
    tail = np.sum(exp1(big))
    z0 = c[0]
    zp = EULER_GAMMA * c[0] + c[0] * math.log(t0) + inner + tail
    zp += sum(cj * t0 ** j / j for j, cj in c.items() if j != 0)
    err = abs(inner - inner2) + resid * (1 + abs(math.log(t0))) * 10 + 1e-14 * abs(zp)
    if not config.nonunitary:
        z0, zp = z0.real, zp.real
    return z0, zp, float(err)


def zeta(config: TorusConfig, s: float, a: float = 0.0) -> complex:
    """``zeta_a(s) = w Z_a(s)`` by the Mellin route (``s`` away from the poles)."""
    s = float(s)
    w = config.n_weight
    if w == 0:
        return 0.0
    if abs(s) < 1e-14:
        return w * _zeta_scalar_prime(config, a)[0]
    small, t0, c, resid, cond, big = _mellin_parts(config, a)
    for j in c:
        if abs(s + j) < 1e-12:
            raise ValueError("s is a pole of the Mellin transform")
    if s <= 0 and abs(s - round(s)) < 1e-12:
        # 1/Gamma vanishes; only the polar coefficient survives
        m = int(round(-s))
        return w * c.get(m, 0.0) * (-1) ** m * math.factorial(m)
    inner = _log_quad(lambda t: t ** s * _theta_cut(config, small, t), t0, 1.0)
    from scipy.integrate import quad
    tail = 0.0
    for mu in big:
        f = lambda t, mu=mu: t ** (s - 1) * np.exp(-t * mu)
        re = quad(lambda t: f(t).real, 1.0, np.inf, limit=200)[0]
        im = quad(lambda t: f(t).imag, 1.0, np.inf, limit=200)[0] if np.iscomplexobj(big) else 0.0
        tail += re + 1j * im
    poly = sum(cj * t0 ** (s + j) / (s + j) for j, cj in c.items())
    val = (inner + tail + poly) / gamma(s)
    return w * (val if config.nonunitary else complex(val).real)


def _check_branch(config: TorusConfig, a: float) -> None:
    """Principal-branch logs need every eigenvalue in the open right half plane."""
    vals = _scalar_eigenvalues(config, 4.0 * max(a, 1.0))
    if len(vals) and (np.min(np.real(vals)) <= 0 or np.max(np.abs(np.angle(vals))) > math.pi / 2 - 1e-9):
        raise ValueError("non-unitary spectrum leaves the right half plane; "
                         "principal-branch logs are not consistent")


def zeta_torsion(config: TorusConfig, a: float) -> ZetaResult:
    """``torsion_log = zeta_a'(0) + log small_factor`` with the Mellin route.

    ``small_factor = prod_q det(box | mu < a, q)^((-1)^(q+1) q)``.  For
    non-unitary characters the logs use the principal branch, which is only
    consistent when the whole spectrum has positive real part; this is checked.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    if config.nonunitary:
        _check_branch(config, a)
    w = config.n_weight
    small = _small_eigenvalues(config, a)
    log_small = -w * np.sum(np.log(small.astype(complex)))
    if not config.nonunitary:
        log_small = log_small.real
    if w == 0:
        return ZetaResult(0.0, 0.0, 1.0, 0.0, 0.0, a, 0.0)
    z0, zp, err = _zeta_scalar_prime(config, a)
    zeta0, zeta0p = w * z0, w * zp
    return ZetaResult(zeta0, zeta0p, np.exp(log_small), zeta0p + log_small, abs(w) * err, a, log_small)


def epstein_torsion_log(config: TorusConfig, tol: float = 1e-18) -> complex:
    """Closed-form torsion of a one-factor torus (Kronecker limit formula).

    ``Z'(0) = 2 pi tau_y B2(alpha) - sum_j [log(1 - e^{2 pi i c_j} q_j) + log(1 - e^{-2 pi i c_j} q_j)]``
    with ``q_j = exp(-2 pi tau_y s_j)``, ``s_j = sqrt((j + alpha)^2)`` (principal root),
    ``c_j = beta - (j + alpha) tau_x`` and ``B2(x) = x^2 - x + 1/6``; the torsion is
    ``-Z'(0)``.  Independent of the metric scale.
    """
    if config.n != 1:
        raise ValueError("closed form implemented for one factor")
    f = config.factors[0]
    al, be = complex(f.alpha), complex(f.beta)
    tx, ty = f.tau.real, f.tau.imag
    b2 = al * al - al + 1.0 / 6.0
    acc = 2 * math.pi * ty * b2
    j0 = -int(round(al.real))
    for r in range(0, 100000):
        js = (j0 + r,) if r == 0 else (j0 + r, j0 - r)
        shell = 0.0
        for j in js:
            x = j + al
            sj = cmath.sqrt(x * x)
            c = be - x * tx
            e = cmath.exp(-2 * math.pi * ty * sj)
            shell += -(cmath.log(1 - cmath.exp(2j * math.pi * c) * e)
                       + cmath.log(1 - cmath.exp(-2j * math.pi * c) * e))
        acc += shell
        if r > 2 and abs(shell) < tol:
            break
    # torsion_log = w Z'(0) with w = -1
    return -acc if config.nonunitary else -acc.real


def modular_partner(config: TorusConfig) -> TorusConfig:
    """``tau -> -1/tau`` with the character transported to ``(beta, -alpha mod 1)``."""
    if config.n != 1:
        raise ValueError("one factor only")
    f = config.factors[0]
    a = (-f.alpha) % 1.0 if not f.nonunitary else -f.alpha
    return TorusConfig((TorusFactor(-1 / f.tau, f.scale, f.beta, a, f.nonunitary),), config.p)


# ---------------------------------------------------------------- variation operator

def _theta_dot(config: TorusConfig) -> np.ndarray:
    """Scaling family ``g_l = e^l g``: ``Theta_dot`` equals the Kahler form."""
    return theta_dot_from_hermitian(np.eye(config.n))


@lru_cache(maxsize=8)
def _fiber_ops_cached(n: int, p: int):
    mats, parity = clifford_matrices(n)
    th = theta_dot_from_hermitian(np.eye(n))
    dim = len(parity)
    q1 = np.zeros((dim, dim), dtype=complex)
    for a in range(2 * n):
        for b in range(2 * n):
            if th[a, b]:
                q1 += 0.25j * th[a, b] * mats[a] @ mats[b]
    th_jj = sum(th[i, i + 1] - th[i + 1, i] for i in range(0, 2 * n, 2))
    q1 += 0.25 * th_jj * np.eye(dim)
    # Theta_dot(w_j, wbar_i) with w_j = (e_{2j-1} - i e_{2j})/sqrt2
    W = np.zeros((n, 2 * n), dtype=complex)
    for j in range(n):
        W[j, 2 * j], W[j, 2 * j + 1] = 1 / math.sqrt(2), -1j / math.sqrt(2)
    tw = W @ th @ W.conj().T            # tw[j, i] = Theta_dot(w_j, wbar_i)
    # Q2 = i sum Theta_dot(w_j, wbar_i) w^j ^ i_{w_i} on Lambda^p(T^{*(1,0)})
    q2 = exterior_power_derivation(1j * tw, p) if p else np.zeros((1, 1), dtype=complex)
    return mats, parity, q1, q2


def fiber_operators(config: TorusConfig):
    """``(c(e_a) list, parity, Q1, Q2)``: Q1 on ``Lambda(T^{*(0,1)})``, Q2 on ``Lambda^p(T^{*(1,0)})``."""
    return _fiber_ops_cached(config.n, config.p)


@dataclass(frozen=True)
class VariationTrace:
    value: complex
    q1: complex
    q2: complex
    t: float


def variation_trace(config: TorusConfig, t: float, operator: str = "box") -> VariationTrace:
    """``tr_s[Q exp(-t box)]`` (``operator="D2"``: ``exp(-t D^2)``) for the scaling family.

    ``Q`` acts fiberwise, so the trace is ``str(Q) * Theta(t)`` with the
    fiber supertrace over ``Lambda(T^{*(0,1)}) (x) Lambda^p(T^{*(1,0)})``.
    """
    mats, parity, q1, q2 = fiber_operators(config)
    dp = q2.shape[0] if config.p else int(comb(config.n, config.p, exact=True))
    s1 = matrix_supertrace(q1, parity) * dp
    s2 = np.sum(parity) * np.trace(q2) if config.p else 0.0
    tt = 2 * t if operator == "D2" else t
    if operator not in ("box", "D2"):
        raise ValueError("operator must be 'box' or 'D2'")
    th = heat_trace(config, tt)
    return VariationTrace(complex((s1 + s2) * th), complex(s1 * th), complex(s2 * th), t)


def a_minus1_chern_weil(config: TorusConfig) -> complex:
    """``(2 pi i)^-n int (i/2) Theta_dot td(R^+) tr exp(-R^E)`` on the flat torus."""
    n = config.n
    sp = GeneratorSpace(2 * n)
    kahler = sum((sp.frame(2 * k + 1) * sp.frame(2 * k + 2) for k in range(n)), sp.one(0))
    rank = int(comb(n, config.p, exact=True))
    form = kahler * 0.5j * todd(FormMatrix.zeros(sp, n)) * chern_char(FormMatrix.zeros(sp, rank))
    return integrate_top(form, config.geometry()) * (2j * math.pi) ** (-n)


# ---------------------------------------------------------------- Fourier modes

def lowest_modes(config: TorusConfig, count: int):
    """``count`` lowest product modes as ``(eigenvalue, [wave vectors per factor])``."""
    lmax = 10.0
    while True:
        per = [list(zip(*_factor_modes(f, lmax))) for f in config.factors]
        combos = []
        for choice in itertools.product(*per):
            mu = sum(c[2] for c in choice)
            if np.real(mu) <= lmax:
                combos.append((mu, [f.frequency(c[0], c[1]) for f, c in zip(config.factors, choice)]))
        if len(combos) >= count:
            combos.sort(key=lambda c: np.real(c[0]))
            return combos[:count]
        lmax *= 2


def mode_operators(config: TorusConfig, kvecs):
    """``(D, dbar, dbar*)`` on ``Lambda(T^{*(0,1)})`` for one Fourier mode.

    ``nabla_{e_a} = i k_a``; ``dbar = sum wbar^j ^ nabla_{wbar_j}``,
    ``dbar* = -sum i_{wbar_j} nabla_{w_j}`` and ``D = sqrt2 (dbar + dbar*)``.
    """
    n = config.n
    k = np.concatenate([np.asarray(v, dtype=complex) for v in kvecs])
    mats, parity, _, _ = fiber_operators(config)
    dim = len(parity)
    # creation matrices from c(e_{2j-1}) = a_j^+ - a_j, c(e_{2j}) = i (a_j^+ + a_j)
    dbar = np.zeros((dim, dim), dtype=complex)
    dstar = np.zeros((dim, dim), dtype=complex)
    for j in range(n):
        c1, c2 = mats[2 * j], mats[2 * j + 1]
        create = 0.5 * (c1 - 1j * c2)
        annih = -0.5 * (c1 + 1j * c2)
        nab_wbar = 1j * (k[2 * j] + 1j * k[2 * j + 1]) / math.sqrt(2)
        nab_w = 1j * (k[2 * j] - 1j * k[2 * j + 1]) / math.sqrt(2)
        dbar += nab_wbar * create
        dstar += -nab_w * annih
    return math.sqrt(2) * (dbar + dstar), dbar, dstar


def d_squared_check(config: TorusConfig, count: int = 20) -> float:
    """Max over the lowest modes of ``|D^2 - 2 mu|`` (and ``D`` vs Clifford form)."""
    mats, parity, _, _ = fiber_operators(config)
    worst = 0.0
    for mu, kv in lowest_modes(config, count):
        D, _, _ = mode_operators(config, kv)
        k = np.concatenate(kv)
        Dc = sum(mats[a] * (1j * k[a]) for a in range(len(k)))
        worst = max(worst, float(np.max(np.abs(D @ D - 2 * mu * np.eye(len(parity))))),
                    float(np.max(np.abs(D - Dc))))
    return worst


class SuperOp:
    """Element of ``Lambda(da, dab) (x) End(W)`` for a Z2-graded ``W``.

    Stored through its left action on ``Lambda(da, dab) (x) W`` with basis
    ``{1, da, dab, da dab} (x) W``; products are matrix products.
    """

    _BASIS = ((), (0,), (1,), (0, 1))

    def __init__(self, big: np.ndarray, parity: np.ndarray):
        self.big = big
        self.parity = np.asarray(parity)

    @property
    def dim(self) -> int:
        return len(self.parity)

    @classmethod
    def from_matrix(cls, X, parity, aux=()) -> "SuperOp":
        """``a_aux X`` with ``X`` split into even and odd parts."""
        parity = np.asarray(parity)
        d = len(parity)
        P = np.diag(parity).astype(complex)
        X = np.asarray(X, dtype=complex)
        ev = 0.5 * (X + P @ X @ P)
        od = 0.5 * (X - P @ X @ P)
        big = np.zeros((4 * d, 4 * d), dtype=complex)
        B = cls._BASIS
        for ci, K in enumerate(B):
            # sign of moving X past a_K
            blk = ev + (-1) ** len(K) * od
            merged, sign = _aux_mul(aux, K)
            if merged is None:
                continue
            ri = B.index(merged)
            big[ri * d:(ri + 1) * d, ci * d:(ci + 1) * d] += sign * blk
        return cls(big, parity)

    def __add__(self, o):
        return SuperOp(self.big + o.big, self.parity)

    def __sub__(self, o):
        return SuperOp(self.big - o.big, self.parity)

    def __mul__(self, c):
        if isinstance(c, SuperOp):
            return SuperOp(self.big @ c.big, self.parity)
        return SuperOp(self.big * c, self.parity)

    __rmul__ = __mul__

    def __matmul__(self, o):
        return SuperOp(self.big @ o.big, self.parity)

    def exp(self) -> "SuperOp":
        return SuperOp(scipy.linalg.expm(self.big), self.parity)

    def coeff(self, aux=()) -> np.ndarray:
        d = self.dim
        r = self._BASIS.index(tuple(aux))
        return self.big[r * d:(r + 1) * d, 0:d]

    def str_coeff(self, aux=()) -> complex:
        return complex(np.sum(self.parity * np.diag(self.coeff(aux))))


def _aux_mul(a: tuple, b: tuple):
    if set(a) & set(b):
        return None, 0
    seq = list(a) + list(b)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return tuple(sorted(seq)), sign


def _mode_superops(config: TorusConfig, kv, t: float):
    mats, parity, q1, _ = fiber_operators(config)
    D, _, _ = mode_operators(config, kv)
    S = lambda X, aux=(): SuperOp.from_matrix(X, parity, aux)
    r = math.sqrt(t / 2)
    comm = D @ q1 - q1 @ D
    lhs = S(-t * D @ D) - S(r * D, (0,)) - S(r * comm, (1,)) + S(q1, (0, 1))
    return lhs, S, mats, parity, q1, D


def lichnerowicz_check(config: TorusConfig, t: float = 0.7, count: int = 20) -> float:
    """Flat form of the da-dab Lichnerowicz identity on Fourier modes.

    ``-tD^2 - sqrt(t/2) da D - sqrt(t/2) dab [D, Q1] + da dab Q1
    = t sum_i (nabla_i - da c_i / (2 sqrt(2t)) - i dab Th_ki c_k / (2 sqrt(2t)))^2
    + da dab Th(e_j, J e_j) / 4``; returns the largest deviation.
    """
    th = _theta_dot(config)
    n2 = th.shape[0]
    th_jj = sum(th[i, i + 1] - th[i + 1, i] for i in range(0, n2, 2))
    worst = 0.0
    for mu, kv in lowest_modes(config, count):
        lhs, S, mats, parity, q1, D = _mode_superops(config, kv, t)
        k = np.concatenate(kv)
        I = np.eye(len(parity))
        kappa = 1 / (2 * math.sqrt(2 * t))
        rhs = S(0 * I)
        for i in range(n2):
            X = S(1j * k[i] * I) - S(kappa * mats[i], (0,))
            odd = sum(th[kk, i] * mats[kk] for kk in range(n2))
            X = X - S(1j * kappa * odd, (1,))
            rhs = rhs + t * (X @ X)
        rhs = rhs + S(0.25 * th_jj * I, (0, 1))
        worst = max(worst, float(np.max(np.abs(lhs.big - rhs.big))))
    return worst


def bismut_identity_check(config: TorusConfig, t: float = 0.4, count: int = 20) -> float:
    """Per-mode check of ``d/dt (t tr_s[Q1 e^{-tD^2}]) = (tr_s exp(...))^{da dab}``."""
    worst = 0.0
    for mu, kv in lowest_modes(config, count):
        lhs_op, S, mats, parity, q1, D = _mode_superops(config, kv, t)
        e = lhs_op.exp()
        rhs = e.str_coeff((0, 1))
        d2 = 2 * mu
        lhs = (1 - t * d2) * np.exp(-t * d2) * matrix_supertrace(q1, parity)
        worst = max(worst, abs(lhs - rhs))
    return float(worst)


# ---------------------------------------------------------------- M0 and anomaly

@dataclass(frozen=True)
class M0Fit:
    m0: complex
    coeffs: dict
    residual: float
    cond: float


def default_t_grid(config: TorusConfig, count: int = 40) -> np.ndarray:
    """One decade ending where image terms drop below ``e^{-30}``."""
    d = config.shortest_image()
    t_max = min(1.0, d * d / 60.0)
    return np.geomspace(t_max / 10, t_max, count)


def m0_extract(config: TorusConfig, samples=None, k: int = 3, max_cond: float = 1e12) -> M0Fit:
    """``M_0`` from a Laurent fit ``sum_{j=-n}^{k} M_j t^j`` of the variation trace."""
    ts = default_t_grid(config) if samples is None else np.asarray(samples, dtype=float)
    if ts.min() <= 0 or ts.max() > 1 or ts.max() / ts.min() < 10 * (1 - 1e-12):
        raise ValueError("t-grid must span at least one decade inside (0, 1]")
    ys = np.array([variation_trace(config, t).value for t in ts])
    if not config.nonunitary:
        ys = ys.real
    coef, resid, cond = fit_laurent(ts, ys, -config.n, k)
    if cond > max_cond:
        raise ValueError(f"ill-conditioned Laurent fit (condition number {cond:.3g})")
    return M0Fit(coef[0], coef, resid, cond)


@dataclass(frozen=True)
class AnomalyReport:
    lhs: float
    rhs: complex
    tol: float
    passed: bool
    details: dict = field(default_factory=dict)


def _cut_below(config: TorusConfig) -> float:
    vals = _scalar_eigenvalues(config, 1e3 / min(f.scale for f in config.factors))
    return 0.5 * float(np.min(np.real(vals)))


def anomaly_check(config: TorusConfig, scale0: float, scale1: float, tol: float = 1e-6) -> AnomalyReport:
    """Torsion ratio between two metric scales against the transgressed Todd class.

    ``LHS = torsion_log(scale1) - torsion_log(scale0)``; ``RHS`` is the
    integral of the transgression form along ``g_l = scale0^(1-l) scale1^l g``.
    """
    if scale0 <= 0 or scale1 <= 0:
        raise ValueError("scales must be positive")
    c0, c1 = config.scaled(scale0), config.scaled(scale1)
    z0 = zeta_torsion(c0, _cut_below(c0))
    z1 = zeta_torsion(c1, _cut_below(c1))
    lhs = complex(z1.torsion_log - z0.torsion_log)
    n = config.n
    sp = GeneratorSpace(2 * n)
    u = math.log(scale1 / scale0)
    th = theta_dot_from_hermitian(u * np.eye(n))

    def family(ell):
        return CurvatureData(FormMatrix.zeros(sp, n), FormMatrix.zeros(sp, int(comb(n, config.p, exact=True))),
                             FormMatrix.from_numeric(sp, u * np.eye(n)), th)

    form = transgression_form(family, config.p)
    rhs = integrate_top(form, config.geometry())
    err = z0.err + z1.err
    passed = abs(lhs - rhs) < tol
    return AnomalyReport(lhs.real if not config.nonunitary else lhs, rhs, tol, bool(passed),
                         {"torsion_log0": z0.torsion_log, "torsion_log1": z1.torsion_log,
                          "err": err})

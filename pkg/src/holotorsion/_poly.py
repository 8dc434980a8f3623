"""Sparse polynomials in x_1..x_n with ring-valued coefficients.

A polynomial is a dict ``{exponent tuple: coefficient}``.  Coefficients may
be numbers, multivectors or (numpy) fiber matrices; a product of two
ndarray coefficients is a matrix product.
"""
from __future__ import annotations

import numpy as np

from .algebra import Multivector


def is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return not any(bool(x) for x in c.flat)
    return not c


def cmul(a, b):
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        return a @ b
    if isinstance(a, Multivector) and isinstance(b, np.ndarray):
        return np.vectorize(lambda e: a * e, otypes=[object])(b)
    if isinstance(b, Multivector) and isinstance(a, np.ndarray):
        return np.vectorize(lambda e: e * b, otypes=[object])(a)
    return a * b


def clean(p: dict) -> dict:
    return {k: c for k, c in p.items() if not is_zero(c)}


def add(*ps) -> dict:
    out: dict = {}
    for p in ps:
        for k, c in p.items():
            out[k] = out[k] + c if k in out else c
    return clean(out)


def scale(p: dict, c, left: bool = True) -> dict:
    return clean({k: (cmul(c, v) if left else cmul(v, c)) for k, v in p.items()})


def mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for ka, ca in p.items():
        for kb, cb in q.items():
            k = tuple(x + y for x, y in zip(ka, kb))
            v = cmul(ca, cb)
            out[k] = out[k] + v if k in out else v
    return clean(out)


def deriv(p: dict, i: int) -> dict:
    out = {}
    for k, c in p.items():
        if k[i]:
            kk = list(k)
            kk[i] -= 1
            out[tuple(kk)] = c * k[i]
    return clean(out)


def laplacian(p: dict, n: int) -> dict:
    return add(*[deriv(deriv(p, i), i) for i in range(n)])


def monomial(n: int, i: int, c=1) -> dict:
    k = [0] * n
    k[i] = 1
    return {tuple(k): c}


def constant(n: int, c) -> dict:
    return {(0,) * n: c}


def degree_map(p: dict, f) -> dict:
    """Multiply each coefficient by ``f(total degree)``."""
    return clean({k: c * f(sum(k)) for k, c in p.items()})


def evaluate(p: dict, x):
    acc = None
    for k, c in p.items():
        w = 1.0
        for xi, e in zip(x, k):
            w = w * xi ** e
        term = c * w
        acc = term if acc is None else acc + term
    return 0 if acc is None else acc


def truncate(p: dict, max_degree: int) -> dict:
    return {k: c for k, c in p.items() if sum(k) <= max_degree}

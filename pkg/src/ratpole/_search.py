"""Scalar golden-section refinement used by sup/inf searches."""

from __future__ import annotations

import math

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, a: float, b: float, rel_tol: float = 1e-7, max_iter: int = 200):
    """Golden-section maximization of a unimodal f on [a, b].

    Returns (x, f(x)).  rel_tol bounds the bracket width relative to the
    initial interval; callers sample densely first so unimodality holds on
    the bracket they pass in.
    """
    lo, hi = a, b
    width0 = hi - lo
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo <= rel_tol * max(width0, 1e-300):
            break
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    x = c if fc >= fd else d
    return x, max(fc, fd)


def golden_min(f, a: float, b: float, rel_tol: float = 1e-7, max_iter: int = 200):
    x, v = golden_max(lambda t: -f(t), a, b, rel_tol=rel_tol, max_iter=max_iter)
    return x, -v

"""Lebesgue functions and constants of fixed-pole interpolation schemes.

The fundamental functions are

    l_k(x) = varpi(x) / (varpi'(x_k) * (x - x_k)),    k = 1..n,

with varpi'(x_k) always taken from the gamma identity (never from finite
differences); near x_k the removable singularity is evaluated through the
limit branch varpi'(x)/varpi'(x_k).  The Lebesgue function is the absolute
sum, its sup over J is located by per-segment sampling plus golden-section
refinement, and growth studies tabulate lambda_n against log n and
log ||gamma_n||.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ._search import golden_max
from .chebmark import SchemeEvaluator
from .intervals import InterpolationScheme, NumericalError, ValidationError

_NEAR_NODE = 1e-8
_CSV_HEADER = "n,lambda,gamma_norm,argmax,ratio_log_gamma,ratio_log_n"


def _as_evaluator(scheme):
    """Accept an InterpolationScheme or any object with the evaluator duck
    interface (nodes, system, weights, varpi, varpi_prime, gamma_norm)."""
    if isinstance(scheme, InterpolationScheme):
        return SchemeEvaluator(scheme)
    required = ("nodes", "system", "weights", "varpi", "varpi_prime")
    if all(hasattr(scheme, attr) for attr in required):
        return scheme
    raise ValidationError(f"object {type(scheme).__name__} is not a scheme or evaluator")


def _gamma_norm_of(ev) -> float:
    if hasattr(ev, "gamma_norm"):
        return float(ev.gamma_norm())
    return float(ev.phase.gamma_norm())


@dataclass(frozen=True)
class GrowthRecord:
    """One row of a growth study: lambda_n, ||gamma_n|| and the log ratios.

    Ratios against vanishing logarithms (n = 1, or ||gamma|| <= 1) are
    reported as NaN.
    """

    n: int
    lambda_n: float
    gamma_norm: float
    argmax: float
    ratio_log_gamma: float
    ratio_log_n: float


def fundamental(scheme, k: int, x):
    """l_k(x) for the 1-based node index k (nodes in decreasing order)."""
    ev = _as_evaluator(scheme)
    if not 1 <= k <= len(ev.nodes):
        raise ValidationError(f"node index {k} out of range 1..{len(ev.nodes)}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x).astype(float)
    xk = ev.nodes[k - 1]
    wk = ev.weights[k - 1]
    out = np.empty_like(xv)
    near = np.abs(xv - xk) < _NEAR_NODE
    if np.any(~near):
        out[~near] = ev.varpi(xv[~near]) / (wk * (xv[~near] - xk))
    if np.any(near):
        out[near] = ev.varpi_prime(xv[near]) / wk
    return float(out[0]) if scalar else out


def lebesgue_function(scheme, x):
    """lambda(x) = sum_k |l_k(x)|; equals 1 at every node."""
    ev = _as_evaluator(scheme)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    xv = np.atleast_1d(x).astype(float)
    nodes, weights = ev.nodes, ev.weights
    out = np.empty_like(xv)
    # chunk to keep the (points x nodes) matrix modest
    chunk = max(1, int(8e6) // max(1, len(nodes)))
    for lo in range(0, len(xv), chunk):
        xs = xv[lo : lo + chunk]
        vp = np.abs(ev.varpi(xs))
        diff = xs[:, None] - nodes[None, :]
        near = np.abs(diff) < _NEAR_NODE
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = vp[:, None] / np.abs(weights[None, :] * diff)
        if np.any(near):
            rows = np.nonzero(near.any(axis=1))[0]
            vprime = np.abs(ev.varpi_prime(xs[rows]))
            for r, vpr in zip(rows, vprime):
                cols = np.nonzero(near[r])[0]
                terms[r, cols] = vpr / np.abs(weights[cols])
        out[lo : lo + chunk] = terms.sum(axis=1)
    return float(out[0]) if scalar else out


def _segments(ev) -> list[tuple[float, float]]:
    """Maximal node-free closed segments of J (endpoint pieces included)."""
    segs = []
    nodes_sorted = np.sort(ev.nodes)
    for j in range(1, ev.system.s + 1):
        a, b = ev.system.interval(j)
        inside = nodes_sorted[(nodes_sorted > a) & (nodes_sorted < b)]
        pts = np.concatenate([[a], inside, [b]])
        segs.extend((float(pts[i]), float(pts[i + 1])) for i in range(len(pts) - 1))
    return segs


def lebesgue_constant(
    scheme,
    samples_per_gap: int = 20,
    rel_tol: float = 1e-6,
    verify: bool = False,
) -> GrowthRecord:
    """sup_J lambda(x) with its argmax, packaged as a GrowthRecord.

    Each node-free segment is sampled (>= samples_per_gap interior points)
    and the best bracket is refined by golden section; lambda is smooth
    between nodes so this resolves the sup to relative rel_tol.  With
    verify=True the sampling is doubled and the two answers must agree to
    1e-5 relative.
    """
    ev = _as_evaluator(scheme)
    best_x, best_v = _sup_search(ev, samples_per_gap, rel_tol)
    if verify:
        x2, v2 = _sup_search(ev, 2 * samples_per_gap, rel_tol)
        if abs(v2 - best_v) > 1e-5 * max(1.0, abs(best_v)):
            raise NumericalError(
                f"sup search unstable: {best_v} vs {v2} at doubled sampling"
            )
        if v2 > best_v:
            best_x, best_v = x2, v2
    n = len(ev.nodes)
    gnorm = _gamma_norm_of(ev)
    log_g = math.log(gnorm) if gnorm > 1.0 else float("nan")
    log_n = math.log(n) if n > 1 else float("nan")
    return GrowthRecord(
        n=n,
        lambda_n=best_v,
        gamma_norm=gnorm,
        argmax=best_x,
        ratio_log_gamma=best_v / log_g if log_g == log_g else float("nan"),
        ratio_log_n=best_v / log_n if log_n == log_n else float("nan"),
    )


def _sup_search(ev, samples_per_gap: int, rel_tol: float) -> tuple[float, float]:
    best_x, best_v = None, -np.inf
    for lo, hi in _segments(ev):
        xs = np.linspace(lo, hi, samples_per_gap + 2)
        vals = lebesgue_function(ev, xs)
        k = int(np.argmax(vals))
        if vals[k] > best_v:
            best_x, best_v = float(xs[k]), float(vals[k])
        bl = xs[max(k - 1, 0)]
        bh = xs[min(k + 1, len(xs) - 1)]
        if bh > bl:
            x, v = golden_max(lambda t: float(lebesgue_function(ev, t)), bl, bh, rel_tol=rel_tol)
            if v > best_v:
                best_x, best_v = float(x), float(v)
    return best_x, best_v


@dataclass(frozen=True)
class GrowthStudy:
    """Growth-study table plus the ratio trends used by the plateau checks."""

    records: tuple[GrowthRecord, ...]
    max_ratio_log_n: float
    max_ratio_log_gamma: float
    final_ratio_log_n: float
    final_ratio_log_gamma: float

    @property
    def drop_log_n(self) -> float:
        """(max - final)/max of lambda/log n; small means the ratio plateaus."""
        if self.max_ratio_log_n == 0 or self.max_ratio_log_n != self.max_ratio_log_n:
            return float("nan")
        return (self.max_ratio_log_n - self.final_ratio_log_n) / self.max_ratio_log_n

    @property
    def drop_log_gamma(self) -> float:
        if self.max_ratio_log_gamma == 0 or self.max_ratio_log_gamma != self.max_ratio_log_gamma:
            return float("nan")
        return (self.max_ratio_log_gamma - self.final_ratio_log_gamma) / self.max_ratio_log_gamma


def growth_study(
    family: Callable[[int], object],
    n_list: Sequence[int],
    samples_per_gap: int = 20,
    jobs: int = 1,
) -> GrowthStudy:
    """Tabulate lebesgue_constant over a scheme family indexed by n.

    family(n) must yield a valid scheme or evaluator; any construction
    failure aborts with the offending n in the message.
    """
    n_list = list(n_list)

    def one(n: int) -> GrowthRecord:
        try:
            scheme = family(n)
            return lebesgue_constant(scheme, samples_per_gap=samples_per_gap)
        except Exception as exc:
            raise NumericalError(f"growth study failed at n={n}: {exc}") from exc

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, n_list))
    else:
        records = [one(n) for n in n_list]

    ratios_n = [r.ratio_log_n for r in records if r.ratio_log_n == r.ratio_log_n]
    ratios_g = [r.ratio_log_gamma for r in records if r.ratio_log_gamma == r.ratio_log_gamma]
    return GrowthStudy(
        records=tuple(records),
        max_ratio_log_n=max(ratios_n) if ratios_n else float("nan"),
        max_ratio_log_gamma=max(ratios_g) if ratios_g else float("nan"),
        final_ratio_log_n=ratios_n[-1] if ratios_n else float("nan"),
        final_ratio_log_gamma=ratios_g[-1] if ratios_g else float("nan"),
    )


def growth_to_csv(records: Iterable[GrowthRecord]) -> str:
    """CSV table with the canonical column names."""
    buf = io.StringIO()
    buf.write(_CSV_HEADER + "\n")
    for r in records:
        buf.write(
            f"{r.n},{r.lambda_n!r},{r.gamma_norm!r},{r.argmax!r},"
            f"{r.ratio_log_gamma!r},{r.ratio_log_n!r}\n"
        )
    return buf.getvalue()

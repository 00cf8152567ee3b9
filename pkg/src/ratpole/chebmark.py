"""Chebyshev-Markov fractions with fixed poles via harmonic-measure phases.

A pole row whose harmonic-measure sums over every interval are integers
(a "regular" row) induces a single-valued fraction on J:

    Theta(x)  = sum_k omega(1/a_k, J intersect [c_1, x], C \\ J),
    varpi(x)  = cos(pi * (n - Theta(x))),

normalized so that varpi = +1 at the right endpoint; for the all-zero row
on [-1, 1] this gives exactly the Chebyshev polynomial T_n.  The phase is
strictly increasing on each interval from 0 at c_1 to n at c_{2s}, the
interpolation nodes are the solutions of Theta = (2i - 1)/2, and

    gamma(x)        = sqrt(-H(x)) * pi * sum_k w_{1/a_k}(x)
    varpi'(x_i)     = (-1)^(i-1) * gamma(x_i) / sqrt(-H(x_i))   (x_1 largest)

give the derivative weights without any numerical differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._search import golden_min
from .harmonic import DensityFamily, QuadratureRule, sqrt_H
from .intervals import (
    IntervalSystem,
    NodeRow,
    NumericalError,
    PoleRow,
    ValidationError,
    make_node_row,
    validate_system,
)

_SLIT = validate_system([-1.0, 1.0])


class PhaseFunction:
    """Phase, fraction and weight evaluators for one (system, pole row) pair.

    On a single interval everything reduces to closed forms; on several
    intervals the per-pole Green densities are aggregated (poles grouped by
    distinct value) and partial measures are integrated adaptively.
    """

    def __init__(self, system: IntervalSystem, poles: PoleRow, tol: float = 1e-12):
        self.system = system
        self.poles = poles
        self.n = poles.n
        self.tol = tol

        vals, counts = poles.unique()
        self._a = vals
        self._counts = counts.astype(float)
        self._n_inf = float(counts[vals == 0].sum())
        fin = vals != 0
        self._pf = np.zeros(np.count_nonzero(fin), dtype=complex)
        self._cf = self._counts[fin]
        if np.any(fin):
            self._pf = 1.0 / vals[fin]

        if system.s == 1 and (system.left, system.right) == (-1.0, 1.0):
            self._family = None
            self._Rp = sqrt_H(system, self._pf) if len(self._pf) else np.zeros(0, dtype=complex)
            self._sqrt_ratio = np.sqrt((self._pf + 1.0) / (self._pf - 1.0)) if len(self._pf) else None
            self._cum = np.array([0.0, float(self.n)])
        else:
            locs = np.concatenate([self._pf, [complex(np.inf)] * (self._a == 0).sum()])
            cnts = np.concatenate([self._cf, [self._counts[self._a == 0].sum()]]) if self._n_inf else self._cf
            if not self._n_inf:
                locs = self._pf
                cnts = self._cf
            self._family = DensityFamily(system, locs, cnts, tol=tol)
            self._Rp = self._family.Rp
            masses = self._family.combined_masses()
            self._cum = np.concatenate([[0.0], np.cumsum(masses)])
        self._rule = QuadratureRule(tol=tol)

    # -- per-interval cumulative phase ---------------------------------------

    @property
    def interval_masses(self) -> np.ndarray:
        """Theta increments over each interval (the regularity sums q_j)."""
        return np.diff(self._cum)

    def per_pole_masses(self) -> np.ndarray:
        """omega_j(1/a) per distinct pole value, shape (U, s)."""
        if self._family is not None:
            return self._family.masses
        return np.ones((len(self._a), 1))

    # -- phase ---------------------------------------------------------------

    def theta(self, x):
        """Theta(x); vectorized, nondecreasing, 0 at c_1 and n at c_{2s}."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        if np.any(xv < self.system.left - 1e-12) or np.any(xv > self.system.right + 1e-12):
            raise ValidationError("theta requested outside the convex hull of the intervals")
        out = self._theta_slit(xv) if self._family is None else self._theta_quad(xv)
        return float(out[0]) if scalar else out

    def _theta_slit(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(x, -1.0, 1.0)
        out = np.zeros_like(x)
        if self._n_inf:
            out += self._n_inf * (1.0 - np.arccos(x) / math.pi)
        if len(self._pf):
            # tan(arccos(x)/2) = sqrt((1-x)/(1+x)); the arctan form is the
            # Poisson-kernel antiderivative and is branch-safe off the slit
            with np.errstate(divide="ignore"):
                tn = np.sqrt((1.0 - x) / (1.0 + x))
            arg = tn[None, :] * self._sqrt_ratio[:, None]
            contrib = 1.0 - 2.0 / math.pi * np.arctan(arg).real
            contrib[:, x <= -1.0 + 1e-300] = 0.0
            out += self._cf @ contrib
        return out

    def _theta_quad(self, x: np.ndarray) -> np.ndarray:
        order = np.argsort(x)
        xs = x[order]
        vals = np.empty_like(xs)
        fam = self._family
        for j in range(1, self.system.s + 1):
            a, b = self.system.interval(j)
            m, h = 0.5 * (a + b), 0.5 * (b - a)
            inside = (xs > a) & (xs < b)
            idx = np.nonzero(inside)[0]
            if idx.size:
                integrand = fam._interval_integrand(j)
                sgn = fam.interval_signs[j - 1]
                thetas = np.arccos(np.clip((xs[idx] - m) / h, -1.0, 1.0))
                acc = 0.0
                prev = math.pi
                for pos, th in zip(idx, thetas):
                    acc += float(self._cum_weighted(integrand, th, prev))
                    prev = th
                    vals[pos] = self._cum[j - 1] + sgn / math.pi * acc
        # points on gap closures / endpoints / hull boundary
        for pos, xv in enumerate(xs):
            reg = self.system.locate(xv)
            if reg.kind == "interval":
                continue
            if reg.kind == "gap":
                vals[pos] = self._cum[reg.index]
            elif reg.kind == "endpoint":
                vals[pos] = self._cum[reg.index // 2] if reg.index % 2 == 0 else self._cum[(reg.index - 1) // 2]
            else:
                vals[pos] = 0.0 if reg.index == 0 else self._cum[-1]
        out = np.empty_like(vals)
        out[order] = vals
        return out

    def _cum_weighted(self, integrand, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        return float(self._family.counts @ self._rule.integrate(integrand, lo, hi))

    # -- derivative weight ----------------------------------------------------

    def gamma(self, x):
        """gamma(x) = sqrt(-H) * pi * (density sum); smooth and positive on J."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        if self._family is None:
            out = np.full(xv.shape, self._n_inf)
            if len(self._pf):
                out = out + self._cf @ (self._Rp[:, None] / (self._pf[:, None] - xv[None, :])).real
        else:
            sgn = np.empty_like(xv)
            sgn.fill(np.nan)
            for j in range(1, self.system.s + 1):
                a, b = self.system.interval(j)
                sgn[(xv >= a) & (xv <= b)] = self._family.interval_signs[j - 1]
            if np.any(np.isnan(sgn)):
                raise ValidationError("gamma requested outside the intervals")
            out = sgn * self._family.numerator(xv)
        return float(out[0]) if scalar else out

    def theta_prime(self, x):
        """Theta'(x) = gamma(x) / (pi * sqrt(-H(x))) for x in Int J."""
        x = np.asarray(x, dtype=float)
        mH = -self.system.eval_H(x).real
        if np.any(mH <= 0):
            raise ValidationError("theta_prime needs interior points (H < 0)")
        return self.gamma(x) / (math.pi * np.sqrt(mH))

    def gamma_prime(self, x):
        """x-derivative of gamma (analytic, no finite differences)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x)
        if self._family is None:
            out = np.zeros(xv.shape)
            if len(self._pf):
                out = out + self._cf @ (self._Rp[:, None] / (self._pf[:, None] - xv[None, :]) ** 2).real
        else:
            sgn = np.empty_like(xv)
            for j in range(1, self.system.s + 1):
                a, b = self.system.interval(j)
                sgn[(xv >= a) & (xv <= b)] = self._family.interval_signs[j - 1]
            out = sgn * self._family.numerator_prime(xv)
        return float(out[0]) if scalar else out

    def theta_second(self, x):
        """Theta''(x) from gamma, gamma' and H' (analytic chain rule)."""
        x = np.asarray(x, dtype=float)
        mH = -self.system.eval_H(x).real
        if np.any(np.atleast_1d(mH) <= 0):
            raise ValidationError("theta_second needs interior points (H < 0)")
        Hp = self.system.eval_H_prime(x)
        return (self.gamma_prime(x) / np.sqrt(mH) + self.gamma(x) * Hp / (2.0 * mH ** 1.5)) / math.pi

    # -- the fraction ----------------------------------------------------------

    def varpi(self, x):
        """cos(pi*(n - Theta(x))): +-T_n for the all-zero single-interval row."""
        return np.cos(math.pi * (self.n - self.theta(x)))

    def varpi_prime(self, x):
        x = np.asarray(x, dtype=float)
        return math.pi * np.sin(math.pi * (self.n - self.theta(x))) * self.theta_prime(x)

    # -- monotone phase solves ---------------------------------------------------

    def solve(self, targets, node_tol: float = 1e-10, max_iter: int = 60) -> np.ndarray:
        """Solve Theta(x) = target for each target in (0, n), ascending in x.

        Bisection brackets each root inside the interval whose cumulative
        phase range contains the target; Newton polishing uses Theta'.
        """
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        if np.any(targets <= 0.0) or np.any(targets >= self.n):
            raise ValidationError("phase targets must lie strictly inside (0, n)")
        out = np.empty_like(targets)
        for idx, tau in enumerate(targets):
            j = int(np.searchsorted(self._cum, tau))
            j = min(max(j, 1), self.system.s)
            boundary = np.min(np.abs(self._cum - tau))
            if boundary < 1e-9:
                raise NumericalError(
                    f"phase target {tau} is within {boundary:.2e} of an interval boundary value"
                )
            a, b = self.system.interval(j)
            out[idx] = self._solve_one(tau, a, b, node_tol, max_iter)
        return out

    def _solve_one(self, tau, a, b, node_tol, max_iter):
        lo, hi = a, b
        x = 0.5 * (lo + hi)
        for it in range(max_iter):
            fx = self.theta(x) - tau
            if abs(fx) <= node_tol:
                return x
            if fx > 0:
                hi = x
            else:
                lo = x
            if it >= 4:
                try:
                    step = fx / self.theta_prime(x)
                except (ZeroDivisionError, FloatingPointError):
                    step = None
                if step is not None and np.isfinite(step):
                    cand = x - step
                    if lo < cand < hi:
                        x = cand
                        continue
            x = 0.5 * (lo + hi)
        fx = self.theta(x) - tau
        if abs(fx) > 10 * node_tol:
            raise NumericalError(f"phase solve stalled: |Theta - {tau}| = {abs(fx):.2e}")
        return x

    def gamma_norm(self, grid_per_interval: int = 64) -> float:
        """sup of gamma over Int J (gamma extends continuously to endpoints)."""
        from ._search import golden_max

        best = -np.inf
        for j in range(1, self.system.s + 1):
            a, b = self.system.interval(j)
            ts = np.linspace(a, b, grid_per_interval)
            vals = self.gamma(ts)
            k = int(np.argmax(vals))
            best = max(best, float(vals[k]))
            lo = ts[max(k - 1, 0)]
            hi = ts[min(k + 1, len(ts) - 1)]
            if hi > lo:
                _, v = golden_max(lambda t: float(self.gamma(t)), lo, hi, rel_tol=1e-9)
                best = max(best, v)
        return best


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class RegularityReport:
    """Harmonic-measure sums q_j per interval and their integrality residuals."""

    q: np.ndarray
    residuals: np.ndarray
    is_regular: bool
    tol: float


@dataclass(frozen=True)
class ConditionReport:
    """Empirical minima of the single- and two-interval condition sums.

    C1/C2 are the minima of the split sign-group sums over their t-ranges;
    C4 is the minimum of the two-interval gamma ratio.  Fields not applicable
    to the checked object are None.
    """

    C1: float | None = None
    C2: float | None = None
    C4: float | None = None
    t_grid_C1: np.ndarray | None = None
    t_grid_C2: np.ndarray | None = None
    x_grid_C4: np.ndarray | None = None


# ---------------------------------------------------------------------------
# module-level operations


def theta(system: IntervalSystem, poles: PoleRow, x, tol: float = 1e-12):
    return PhaseFunction(system, poles, tol=tol).theta(x)


def varpi(system: IntervalSystem, poles: PoleRow, x, tol: float = 1e-12):
    return PhaseFunction(system, poles, tol=tol).varpi(x)


def gamma(system: IntervalSystem, poles: PoleRow, x, tol: float = 1e-12):
    x = np.asarray(x, dtype=float)
    if np.any(np.atleast_1d(system.eval_H(x).real) >= 0):
        raise ValidationError("gamma is defined on the open intervals (H < 0)")
    return PhaseFunction(system, poles, tol=tol).gamma(x)


def regularity(system: IntervalSystem, poles: PoleRow, tol: float = 1e-8) -> RegularityReport:
    """Check the integrality of the per-interval harmonic-measure sums."""
    phase = PhaseFunction(system, poles)
    q = phase.interval_masses
    if abs(q.sum() - poles.n) > 1e-6:
        raise NumericalError(f"interval masses sum to {q.sum()}, expected {poles.n}")
    residuals = np.abs(q - np.round(q))
    return RegularityReport(q=q, residuals=residuals, is_regular=bool(np.all(residuals <= tol)), tol=tol)


def nodes(
    system: IntervalSystem,
    poles: PoleRow,
    reg_tol: float = 1e-8,
    node_tol: float = 1e-10,
) -> NodeRow:
    """Zeros of varpi: the n solutions of Theta = (2i-1)/2, decreasing."""
    report = regularity(system, poles, tol=reg_tol)
    if not report.is_regular:
        raise ValidationError(
            f"pole row is not regular (residuals {report.residuals}); varpi is not single-valued"
        )
    phase = PhaseFunction(system, poles)
    targets = (2.0 * np.arange(1, poles.n + 1) - 1.0) / 2.0
    xs = phase.solve(targets, node_tol=node_tol)
    return make_node_row(xs[::-1], system)


def varpi_prime_at_nodes(system: IntervalSystem, poles: PoleRow, node_row: NodeRow) -> np.ndarray:
    """varpi'(x_i) from the gamma identity: (-1)^(i-1) gamma/sqrt(-H),
    positive at the largest node and alternating."""
    x = node_row.x
    phase = PhaseFunction(system, poles)
    mH = -system.eval_H(x).real
    if np.any(mH <= 0):
        raise ValidationError("nodes must be interior points")
    mags = phase.gamma(x) / np.sqrt(mH)
    signs = np.where(np.arange(len(x)) % 2 == 0, 1.0, -1.0)
    return signs * mags


def check_starovoitov(poles: PoleRow, grid: int = 4001) -> ConditionReport:
    """Empirical minima C1/C2 of the split condition sums

        sum_k sqrt(1-|a_k|) t / (1 - |a_k| + t^2)

    over t in [sqrt(1 - max |a_k|), 1], for k = 1..n1 and k = n1+1..n.
    C2 is None when the second index range is empty.
    """
    if poles.kappa < 1:
        raise ValidationError("condition sums require kappa >= 1 (at least one zero entry)")
    mods = np.abs(poles.a)
    if np.any(mods > 1.0 + 1e-15):
        raise ValidationError("condition sums are defined for |a_k| <= 1 only")
    n1 = poles.n1
    if n1 < 1:
        raise ValidationError("empty first index range (n1 < 1)")

    def group_min(m):
        if m.size == 0:
            return None, None
        tmin = math.sqrt(max(0.0, 1.0 - float(np.max(m))))
        ts = np.linspace(tmin, 1.0, grid) if tmin < 1.0 else np.array([1.0])

        def f(t):
            t = np.asarray(t, dtype=float)
            return np.sum(
                np.sqrt(1.0 - m)[:, None] * t[None, :] / (1.0 - m[:, None] + t[None, :] ** 2),
                axis=0,
            )

        vals = f(ts)
        k = int(np.argmin(vals))
        best = float(vals[k])
        if len(ts) > 1:
            lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
            _, v = golden_min(lambda t: float(f(np.array([t]))[0]), lo, hi, rel_tol=1e-9)
            best = min(best, v)
        return best, ts

    C1, t1 = group_min(mods[:n1])
    C2, t2 = group_min(mods[n1:])
    return ConditionReport(C1=C1, C2=C2, t_grid_C1=t1, t_grid_C2=t2)


def check_two_interval(system: IntervalSystem, poles: PoleRow, grid: int = 2001) -> ConditionReport:
    """Empirical minimum C4 of gamma(x) / (sqrt((x-c_2)(x-c_3)) * gamma((c_3+1)/2))
    over x in J_2, following the displayed two-interval condition literally."""
    if system.s != 2:
        raise ValidationError(f"two-interval condition needs s = 2, got s = {system.s}")
    phase = PhaseFunction(system, poles)
    c2, c3 = float(system.c[1]), float(system.c[2])
    ref = (c3 + 1.0) / 2.0
    if not bool(system.contains(np.asarray(ref), interior=True)):
        raise ValidationError(f"reference point {(c3 + 1) / 2} is not interior to the intervals")
    denom_ref = float(phase.gamma(ref))

    def ratio(x):
        x = np.asarray(x, dtype=float)
        g = (x - c2) * (x - c3)
        with np.errstate(divide="ignore"):
            return phase.gamma(x) / (np.sqrt(np.maximum(g, 0.0)) * denom_ref)

    best = np.inf
    xs_all = []
    for j in (1, 2):
        a, b = system.interval(j)
        xs = np.linspace(a, b, grid)
        vals = ratio(xs)
        finite = np.isfinite(vals)
        k = int(np.argmin(np.where(finite, vals, np.inf)))
        best = min(best, float(vals[k]))
        lo, hi = xs[max(k - 1, 0)], xs[min(k + 1, grid - 1)]
        if hi > lo:
            _, v = golden_min(lambda t: float(ratio(np.array([t]))[0]), lo, hi, rel_tol=1e-9)
            best = min(best, v)
        xs_all.append(xs)
    return ConditionReport(C4=best, x_grid_C4=np.concatenate(xs_all))


# ---------------------------------------------------------------------------
# rational form and the Pell-type residual (single interval)


def rational_coeffs(reciprocal_values: np.ndarray, value_fn, degree: int):
    """Chebyshev coefficients (P, Q) with value_fn = P/Q on [-1, 1] and
    Q(x) = prod_k (1 - a_k x) over the nonzero reciprocal values."""
    cheb = np.polynomial.chebyshev
    nz = reciprocal_values[reciprocal_values != 0]
    qpow = np.array([1.0 + 0j])
    for ak in nz:
        qpow = np.polynomial.polynomial.polymul(qpow, np.array([1.0, -ak]))
    if np.max(np.abs(qpow.imag)) < 1e-9 * max(1.0, np.max(np.abs(qpow.real))):
        qpow = qpow.real
    Q = cheb.poly2cheb(qpow)
    xs = np.cos((2 * np.arange(degree + 1) + 1) * math.pi / (2 * (degree + 1)))
    vals = np.asarray(value_fn(xs)) * cheb.chebval(xs, Q)
    P = cheb.chebfit(xs, vals, degree)
    return P, Q


def pell_residual(obj, grid) -> float:
    """max over the grid of |r^2 - (x^2 - 1) q^2 - 1| for the single-interval
    fraction r, with q = sin(phase)/sqrt(1-x^2) evaluated trigonometrically
    and r evaluated through its interpolated rational form P/Q.

    obj is a PoleRow on [-1, 1] or a single-interval rational map exposing
    reciprocal_values()/varpi-style evaluators.  Grid points at +-1 are
    excluded.
    """
    if isinstance(obj, PoleRow):
        phase = PhaseFunction(_SLIT, obj)
        recips = obj.a
        degree = obj.n
        varpi_fn = phase.varpi
    else:
        base = getattr(obj, "base", None)
        if base is None or base.s != 1:
            raise ValidationError(
                "Pell residual applies to single-interval objects; use the map boundedness check instead"
            )
        phase = obj.phase
        recips = np.asarray(obj.d, dtype=complex)
        degree = obj.m
        varpi_fn = obj.varpi

    x = np.asarray(grid, dtype=float)
    x = x[(x > -1.0) & (x < 1.0)]
    if x.size == 0:
        raise ValidationError("grid contains no points in (-1, 1)")
    cheb = np.polynomial.chebyshev
    P, Q = rational_coeffs(recips, varpi_fn, degree)
    r = cheb.chebval(x, P) / cheb.chebval(x, Q)
    ph = math.pi * (degree - phase.theta(x))
    q = np.sin(ph) / np.sqrt(1.0 - x * x)
    return float(np.max(np.abs(r * r - (x * x - 1.0) * q * q - 1.0)))


# ---------------------------------------------------------------------------
# cached evaluators for Lebesgue analysis


class SchemeEvaluator:
    """Bundles a scheme with its phase and node-derivative cache."""

    def __init__(self, scheme, tol: float = 1e-12):
        self.scheme = scheme
        self.system = scheme.system
        self.nodes = scheme.nodes.x
        self.n = scheme.n
        self.phase = PhaseFunction(scheme.system, scheme.poles, tol=tol)
        self.weights = varpi_prime_at_nodes(scheme.system, scheme.poles, scheme.nodes)

    def varpi(self, x):
        return self.phase.varpi(x)

    def varpi_prime(self, x):
        return self.phase.varpi_prime(x)

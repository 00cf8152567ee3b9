"""Pullbacks of interpolation schemes through Chebyshev-Markov maps.

A rational map r_m whose pole row is regular on J sends J onto [-1, 1] m-fold
(J is the full inverse image of the interval).  Any interpolation scheme on
[-1, 1] then pulls back: nodes become the mn preimages of the upstairs nodes,
poles become the solutions of r_m(z) = w over the upstairs pole locations w,
and the composed fraction Omega = varpi_up o r_m is again a Chebyshev-Markov
fraction for the pulled-back row, with

    Omega'(x_{(k,j)}) = varpi_up'(y_k) * r_m'(x_{(k,j)}).

The accumulation construction chooses base points alpha in (0, 1) so that
the phase sums

    f_i(alpha) = (1/2pi) sum_j arccos((t_i - alpha_j)/(1 - alpha_j t_i))

hit prescribed rationals rho_i at every accumulation target t_i; the exact
Jacobian d f_i/d alpha_j = sqrt(1-t_i^2) / (2pi sqrt(1-alpha_j^2)(1-alpha_j t_i))
drives a damped Newton iteration, and k = lcm of the rho denominators makes
r_m = cos(k * sum_j arccos(...)) take the value 1 with r'' < 0 at every t_i,
so the poles pulled back from just outside [-1, 1] cluster at all of F.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .chebmark import PhaseFunction, SchemeEvaluator, rational_coeffs, regularity
from .intervals import (
    IntervalSystem,
    InterpolationScheme,
    NodeRow,
    NumericalError,
    PoleRow,
    ValidationError,
    make_node_row,
    make_pole_row,
    make_scheme,
    validate_system,
)

_SLIT = validate_system([-1.0, 1.0])
_cheb = np.polynomial.chebyshev


# ---------------------------------------------------------------------------
# the accumulation construction (base points and multiplicity)


def construction_f(alpha: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Phase sums f_i(alpha) at every accumulation target t_i."""
    u = (F[:, None] - alpha[None, :]) / (1.0 - alpha[None, :] * F[:, None])
    return np.arccos(np.clip(u, -1.0, 1.0)).sum(axis=1) / (2.0 * math.pi)


def construction_jacobian(alpha: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Exact Jacobian d f_i / d alpha_j."""
    return np.sqrt(1.0 - F[:, None] ** 2) / (
        2.0 * math.pi * np.sqrt(1.0 - alpha[None, :] ** 2) * (1.0 - alpha[None, :] * F[:, None])
    )


@dataclass(frozen=True)
class ConstructionProblem:
    """Solved data of the accumulation construction.

    F are the targets, targets the rationals rho_i = f_i(alpha0), k the
    multiplicity making k*rho_i integral, and curvatures the coefficients
    e_i < 0 of r_m(x) = 1 + e_i (x - t_i)^2 + o((x-t_i)^2).
    """

    F: np.ndarray
    targets: tuple[Fraction, ...]
    alpha0: np.ndarray
    k: int
    residual: float
    curvatures: np.ndarray

    @property
    def m(self) -> int:
        return self.k * len(self.alpha0)


def _feasible(alpha: np.ndarray) -> bool:
    return bool(
        np.all(alpha > 0.0) and np.all(alpha < 1.0) and np.all(np.diff(alpha) > 1e-12)
    )


def solve_construction(
    F: Sequence[float],
    targets: Sequence[Fraction | float | str] | None = None,
    max_denominator: int = 12,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> ConstructionProblem:
    """Solve f_i(alpha) = rho_i for alpha in the ordered simplex of (0,1)^N.

    When targets is None, the rho_i default to the fractions with denominator
    <= max_denominator nearest to f_i at the equispaced starting alpha, which
    keeps k (their lcm) small.  Each f_i is strictly decreasing in t_i, so F
    is stored sorted ascending and the targets are paired with it in
    descending order (the only feasible pairing).  Newton steps are halved
    until they stay in the feasible region; leaving it for good is reported
    with the last iterate.
    """
    Fv = np.sort(np.asarray(F, dtype=float))
    if Fv.ndim != 1 or Fv.size == 0:
        raise ValidationError("F must be a nonempty vector")
    if np.any(np.abs(Fv) >= 1.0):
        raise ValidationError("accumulation targets must lie in (-1, 1)")
    if len(np.unique(Fv)) != len(Fv):
        raise ValidationError("accumulation targets must be distinct")
    N = len(Fv)
    alpha = (np.arange(1, N + 1)) / (N + 1.0)

    if targets is None:
        f0 = construction_f(alpha, Fv)
        rho = tuple(Fraction(v).limit_denominator(max_denominator) for v in f0)
    else:
        rho = tuple(sorted((Fraction(t) for t in targets), reverse=True))
    rho_v = np.array([float(r) for r in rho])
    if np.any(rho_v <= 0.0) or np.any(rho_v >= N / 2.0):
        raise ValidationError(f"targets must lie in (0, N/2) = (0, {N / 2})")

    resid = construction_f(alpha, Fv) - rho_v
    for _ in range(max_iter):
        if np.max(np.abs(resid)) <= tol:
            break
        J = construction_jacobian(alpha, Fv)
        try:
            step = np.linalg.solve(J, resid)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular construction Jacobian at alpha={alpha}") from exc
        lam = 1.0
        for _ in range(60):
            # f is symmetric in the alpha_j, so steps crossing the diagonal
            # are re-sorted back into the canonical ordered chamber
            cand = np.sort(alpha - lam * step)
            if _feasible(cand):
                cand_resid = construction_f(cand, Fv) - rho_v
                if np.max(np.abs(cand_resid)) < np.max(np.abs(resid)) or lam < 1e-6:
                    alpha, resid = cand, cand_resid
                    break
            lam *= 0.5
        else:
            raise NumericalError(
                f"Newton left the feasible region; last iterate alpha={alpha}, residual={resid}"
            )
    else:
        raise NumericalError(f"construction Newton did not converge: residual={resid}")

    k = math.lcm(*(r.denominator for r in rho))
    phase_slope = k * np.sqrt(1.0 - alpha[None, :] ** 2) / (
        (1.0 - alpha[None, :] * Fv[:, None]) * np.sqrt(1.0 - Fv[:, None] ** 2)
    )
    curvatures = -0.5 * phase_slope.sum(axis=1) ** 2
    return ConstructionProblem(
        F=Fv,
        targets=rho,
        alpha0=alpha,
        k=k,
        residual=float(np.max(np.abs(resid))),
        curvatures=curvatures,
    )


# ---------------------------------------------------------------------------
# the rational map


class RationalMap:
    """Chebyshev-Markov map r_m with base points d and J = r_m^{-1}([-1,1]).

    On J the map is evaluated through its phase (r = cos(pi (m - Theta_d)),
    so |r| <= 1 there and |r| = 1 exactly at the 2s endpoints); off J it is
    evaluated through an interpolated rational form P/Q with the known
    denominator Q(z) = prod (1 - d_k z).
    """

    def __init__(self, base: IntervalSystem, d, alpha0=None, k: int | None = None, tol: float = 1e-12):
        self.base = base
        self.d = np.asarray(d, dtype=complex)
        if np.max(np.abs(self.d.imag)) == 0.0:
            self.d = self.d.real.astype(float)
        self.m = len(self.d)
        self.alpha0 = None if alpha0 is None else np.asarray(alpha0, dtype=float)
        self.k = k
        row = make_pole_row(self.d, base)
        self.row = row
        self.phase = PhaseFunction(base, row, tol=tol)
        q = self.phase.interval_masses
        if np.max(np.abs(q - np.round(q))) > 1e-8:
            raise ValidationError(f"map pole row is not regular: interval sums {q}")
        self.p = np.round(q).astype(int)
        self.P, self.Q = self._fit_rational()

    # -- evaluation -----------------------------------------------------------

    def varpi(self, x):
        """r_m on J via the phase (alias r)."""
        return self.phase.varpi(x)

    r = varpi

    def r_prime(self, x):
        return self.phase.varpi_prime(x)

    def r_second(self, x):
        """r'' on Int J by analytic differentiation of the phase."""
        x = np.asarray(x, dtype=float)
        th = self.phase.theta(x)
        tp = self.phase.theta_prime(x)
        ts = self.phase.theta_second(x)
        ang = math.pi * (self.m - th)
        return -math.pi**2 * tp**2 * np.cos(ang) + math.pi * np.sin(ang) * ts

    def eval_rational(self, z):
        """r_m off J through the interpolated P/Q form (complex-safe)."""
        z = np.asarray(z, dtype=complex)
        return _cheb.chebval(z, self.P) / _cheb.chebval(z, self.Q)

    def _fit_rational(self):
        pts = []
        for j in range(1, self.base.s + 1):
            a, b = self.base.interval(j)
            cnt = max(4, 4 * self.p[j - 1] + 4)
            grid = np.cos(np.linspace(0.0, math.pi, cnt))
            pts.append(0.5 * (a + b) + 0.5 * (b - a) * grid)
        x = np.unique(np.concatenate(pts))
        vals = self.varpi(x)
        _, Q = rational_coeffs(self.d, lambda t: np.ones_like(t), 0)
        qx = _cheb.chebval(x, Q)
        P = _cheb.chebfit(x, vals * qx, self.m)
        check = _cheb.chebval(x, P) / qx
        resid = float(np.max(np.abs(check - vals)))
        if resid > 1e-8:
            raise NumericalError(f"rational form fit residual {resid:.3e} too large")
        return P, Q

    # -- preimages -------------------------------------------------------------

    def _branch_targets(self, y: float) -> np.ndarray:
        """Phase targets of the m preimages of y in (-1, 1)."""
        psi = math.acos(min(1.0, max(-1.0, y))) / math.pi
        ells = np.arange(1, self.m + 1)
        return np.where((self.m - ells) % 2 == 1, ells - 1 + psi, ells - psi)

    def preimages(self, y: float) -> np.ndarray:
        """The m solutions of r_m(x) = y on J for y in the open interval."""
        if not -1.0 < y < 1.0:
            raise ValidationError(f"preimages need y in (-1, 1); got {y} (use critical_preimages)")
        xs = self.phase.solve(self._branch_targets(y))
        resid = float(np.max(np.abs(self.varpi(xs) - y)))
        if resid > 1e-10:
            raise NumericalError(f"branch solve residual {resid:.3e} at y={y}")
        return xs

    def critical_preimages(self, y: float):
        """Diagnostic preimages of y = +-1: list of (x, multiplicity); the 2s
        endpoints are simple, interior solutions are double (r' = 0 there)."""
        if abs(abs(y) - 1.0) > 1e-12:
            raise ValidationError("critical_preimages is for y = +-1 only")
        out = []
        want_odd = y < 0  # cos(pi(m - Theta)) = -1 iff m - Theta odd
        cums = np.concatenate([[0.0], np.cumsum(self.phase.interval_masses)])
        for g in range(0, self.m + 1):
            if (self.m - g) % 2 != (1 if want_odd else 0):
                continue
            hit_boundary = np.nonzero(np.abs(cums - g) < 1e-9)[0]
            if hit_boundary.size:
                jb = int(hit_boundary[0])
                if jb == 0:
                    out.append((self.base.left, 1))
                elif jb == self.base.s:
                    out.append((self.base.right, 1))
                else:
                    a_gap, b_gap = self.base.gap(jb)
                    out.extend([(a_gap, 1), (b_gap, 1)])
            else:
                x = float(self.phase.solve(np.array([float(g)]))[0])
                out.append((x, 2))
        return out

    # -- solutions of r_m(z) = w off the interval -------------------------------

    def solve_r_equals(self, w) -> np.ndarray:
        """All m solutions of r_m(z) = w (np.inf entries are roots at infinity).

        The degree-m numerator of r_m - w is assembled in the Chebyshev basis
        against the known denominator and solved by a companion (colleague)
        eigenproblem, then Newton-polished on the polynomial; every root is
        verified by direct evaluation of r_m.
        """
        if w is None or not math.isfinite(abs(complex(w))):
            roots = [1.0 / dk for dk in self.d if dk != 0]
            roots += [complex(np.inf)] * (self.m - len(roots))
            return np.asarray(roots, dtype=complex)
        w = complex(w)
        P = np.asarray(self.P, dtype=complex)
        coeffs = P.copy()
        Q = np.asarray(self.Q, dtype=complex)
        ln = max(len(coeffs), len(Q))
        coeffs = np.pad(coeffs, (0, ln - len(coeffs)))
        coeffs = coeffs - w * np.pad(Q, (0, ln - len(Q)))
        scale = float(np.max(np.abs(coeffs)))
        if scale == 0.0:
            raise NumericalError("r - w is identically zero")
        trimmed = 0
        while len(coeffs) > 1 and abs(coeffs[-1]) < 1e-12 * scale:
            coeffs = coeffs[:-1]
            trimmed += 1
        roots = _cheb.chebroots(coeffs)
        dcoeffs = _cheb.chebder(coeffs)
        for _ in range(12):
            fz = _cheb.chebval(roots, coeffs)
            dz = _cheb.chebval(roots, dcoeffs)
            ok = np.abs(dz) > 1e-14 * scale
            stepv = np.zeros_like(roots)
            stepv[ok] = fz[ok] / dz[ok]
            roots = roots - stepv
            if np.max(np.abs(fz)) < 1e-13 * scale:
                break
        resid = np.abs(self.eval_rational(roots) - w)
        if np.max(resid) > 1e-8 * max(1.0, abs(w)):
            raise NumericalError(
                f"pole pullback residual {np.max(resid):.3e} at w={w}; "
                "w may be within 1e-14 of a critical value of the map"
            )
        dist = np.atleast_1d(self.base.distance(roots))
        if np.any(dist < 1e-12):
            raise NumericalError(f"pullback root {roots[np.argmin(dist)]} touches the interval set")
        roots = roots[np.argsort(-np.abs(roots))]
        pad = [complex(np.inf)] * trimmed
        return np.concatenate([np.asarray(pad, dtype=complex), roots]) if pad else roots

    def unimodular_check(self, grid_per_interval: int = 400) -> dict:
        """|r| <= 1 on J and |r| = 1 at the endpoints (multi-interval
        substitute for the Pell-type residual)."""
        worst = 0.0
        for j in range(1, self.base.s + 1):
            a, b = self.base.interval(j)
            xs = np.linspace(a, b, grid_per_interval)
            worst = max(worst, float(np.max(np.abs(self.varpi(xs)) - 1.0)))
        ends = np.array([float(abs(self.varpi(c)) - 1.0) for c in self.base.c])
        return {"max_excess_on_J": worst, "endpoint_deviation": float(np.max(np.abs(ends)))}


def build_map(problem_or_system, d=None, tol: float = 1e-12) -> RationalMap:
    """Map from a solved ConstructionProblem, or from (system, d) directly.

    The (system, d) form requires the d-row to satisfy the integrality
    conditions within tolerance; the problem form places each alpha_j^0 with
    multiplicity k on [-1, 1] and checks r(t_i) = 1, r'(t_i) = 0.
    """
    if isinstance(problem_or_system, ConstructionProblem):
        prob = problem_or_system
        dvec = np.repeat(prob.alpha0, prob.k)
        rmap = RationalMap(_SLIT, dvec, alpha0=prob.alpha0, k=prob.k, tol=tol)
        vals = rmap.varpi(prob.F)
        slopes = rmap.r_prime(prob.F)
        if np.max(np.abs(vals - 1.0)) > 1e-9 or np.max(np.abs(slopes)) > 1e-7:
            raise NumericalError(
                f"construction map fails r(t_i)=1 / r'(t_i)=0: values {vals}, slopes {slopes}"
            )
        return rmap
    system = problem_or_system
    if d is None:
        raise ValidationError("build_map needs either a ConstructionProblem or (system, d)")
    return RationalMap(system, np.asarray(d, dtype=complex), tol=tol)


# ---------------------------------------------------------------------------
# regular base maps on several intervals


def regular_base_map(
    system: IntervalSystem,
    m: int,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> np.ndarray:
    """Base points d (length m) whose row is regular on the system.

    Starts from all zeros and tunes the last s-1 entries by damped Newton
    with finite-difference harmonic-measure derivatives.  When the near-zero
    placement cannot reach the rounded targets (its leverage on the interval
    masses is small), the tuned poles are placed inside distinct gaps
    (d = 1/p with p in the gap), where a full unit of harmonic measure can
    be moved across each gap.
    """
    if m < system.s:
        raise ValidationError(f"need m >= s = {system.s}, got m = {m}")
    s = system.s
    if s == 1:
        return np.zeros(m)

    def q_of(dtail: np.ndarray) -> np.ndarray:
        d = np.concatenate([np.zeros(m - (s - 1)), dtail])
        row = make_pole_row(d, system)
        return PhaseFunction(system, row).interval_masses[: s - 1]

    q0 = q_of(np.zeros(s - 1))
    target = np.round(q0)
    if np.any(target < 1) or np.sum(target) > m - 1:
        raise NumericalError(f"rounded interval targets {target} are not a valid split of {m}")

    sol = _newton_fd(q_of, np.full(s - 1, 1e-3), target, tol, max_iter, bound=0.9)
    if sol is None:
        # gap placement: pole positions p_g inside gap g, d = 1/p
        lo = np.array([system.gap(g)[0] for g in range(1, s)])
        hi = np.array([system.gap(g)[1] for g in range(1, s)])
        width = hi - lo

        def q_of_gap(u: np.ndarray) -> np.ndarray:
            p = lo + width * _sigmoid(u)
            return q_of(1.0 / p)

        qmid = q_of_gap(np.zeros(s - 1))
        target = np.minimum(np.maximum(np.round(qmid), 1), m - 1)
        sol_u = _newton_fd(q_of_gap, np.zeros(s - 1), target, tol, max_iter, bound=None)
        if sol_u is None:
            raise NumericalError(
                f"base-map Newton failed after {max_iter} iterations; residuals "
                f"{q_of_gap(np.zeros(s - 1)) - target}"
            )
        sol = 1.0 / (lo + width * _sigmoid(sol_u))
    return np.concatenate([np.zeros(m - (s - 1)), sol])


def _sigmoid(u: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-u))


def _newton_fd(q_fn, x0: np.ndarray, target: np.ndarray, tol: float, max_iter: int, bound):
    """Damped Newton with forward-difference Jacobian; None on failure."""
    x = x0.copy()
    try:
        resid = q_fn(x) - target
    except (ValidationError, NumericalError):
        return None
    for _ in range(max_iter):
        if np.max(np.abs(resid)) <= tol:
            return x
        h = 1e-6
        J = np.empty((len(x), len(x)))
        for j in range(len(x)):
            xp = x.copy()
            xp[j] += h
            try:
                J[:, j] = (q_fn(xp) - target - resid) / h
            except (ValidationError, NumericalError):
                return None
        try:
            step = np.linalg.solve(J, resid)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        improved = False
        for _ in range(40):
            cand = x - lam * step
            if bound is None or np.max(np.abs(cand)) < bound:
                try:
                    cr = q_fn(cand) - target
                except (ValidationError, NumericalError):
                    cr = None
                if cr is not None and (np.max(np.abs(cr)) < np.max(np.abs(resid)) or lam < 1e-8):
                    x, resid = cand, cr
                    improved = True
                    break
            lam *= 0.5
        if not improved:
            return None
    return x if np.max(np.abs(resid)) <= tol else None


# ---------------------------------------------------------------------------
# composed schemes


def pullback_nodes(rmap: RationalMap, y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Preimages of the upstairs nodes: (xs decreasing, upstairs index).

    y must avoid +-1 (branch endpoints carry double preimages and are
    rejected for node generation; see RationalMap.critical_preimages).
    """
    y = np.asarray(y, dtype=float)
    if np.any(np.abs(y) >= 1.0):
        raise ValidationError("upstairs nodes must lie in (-1, 1)")
    targets = []
    owners = []
    for kidx, yk in enumerate(y):
        targets.append(rmap._branch_targets(float(yk)))
        owners.append(np.full(rmap.m, kidx))
    tg = np.concatenate(targets)
    ow = np.concatenate(owners)
    xs = rmap.phase.solve(tg)
    resid = float(np.max(np.abs(rmap.varpi(xs) - y[ow])))
    if resid > 1e-10:
        raise NumericalError(f"node pullback residual {resid:.3e}")
    order = np.argsort(-xs)
    xs, ow = xs[order], ow[order]
    if np.any(np.diff(xs) >= 0):
        raise NumericalError("pullback nodes are not distinct")
    return xs, ow


def pullback_poles(rmap: RationalMap, w) -> np.ndarray:
    """All m solutions of r_m(z) = w for an upstairs pole location w
    (w = inf returns the map's own pole multiset)."""
    return rmap.solve_r_equals(w)


class ComposedScheme:
    """An upstairs scheme on [-1, 1] pulled back through a rational map.

    Provides the same evaluator interface as SchemeEvaluator (nodes, system,
    weights, varpi, varpi_prime, gamma_norm), everything routed through the
    composition Omega = varpi_up o r_m, plus the explicit downstairs pole
    row for independent cross-checks.
    """

    def __init__(self, rmap: RationalMap, upstairs: InterpolationScheme, tol: float = 1e-12):
        if upstairs.system.s != 1 or (upstairs.system.left, upstairs.system.right) != (-1.0, 1.0):
            raise ValidationError("the upstairs scheme must live on [-1, 1]")
        self.map = rmap
        self.upstairs = upstairs
        self.up_ev = SchemeEvaluator(upstairs, tol=tol)
        self.system = rmap.base

        xs, owner = pullback_nodes(rmap, upstairs.nodes.x)
        self.nodes = xs
        self.owner = owner
        self.weights = self.up_ev.weights[owner] * rmap.r_prime(xs)

        positions, recips = self._pull_poles()
        self.pole_positions = positions
        self.pole_row = make_pole_row(recips, rmap.base)
        self.node_row = make_node_row(xs, rmap.base)
        self.log_C = self._normalization()

    @property
    def n(self) -> int:
        return len(self.nodes)

    # -- pole bookkeeping -----------------------------------------------------

    def _pull_poles(self):
        vals, counts = self.upstairs.poles.unique()
        roots_of: dict[complex, np.ndarray] = {}
        for b in vals:
            b = complex(b)
            if b.imag < 0:
                continue
            w = complex(np.inf) if b == 0 else 1.0 / b
            roots = self.map.solve_r_equals(w)
            roots_of[b] = _symmetrize_conjugates(roots) if b.imag == 0 else roots
        positions = []
        recips = []
        for b, cnt in zip(vals, counts):
            b = complex(b)
            roots = np.conj(roots_of[b.conjugate()]) if b.imag < 0 else roots_of[b]
            for _ in range(int(cnt)):
                positions.extend(roots.tolist())
        positions = np.asarray(positions, dtype=complex)
        finite = np.isfinite(positions.real) & np.isfinite(positions.imag)
        if np.any(np.abs(positions[finite]) < 1e-13):
            raise NumericalError("a downstairs pole sits at the origin; cannot take reciprocals")
        recips = np.zeros(len(positions), dtype=complex)
        recips[finite] = 1.0 / positions[finite]
        order = np.lexsort((recips.imag, recips.real, np.abs(recips)))
        return positions[order], recips[order]

    def _normalization(self) -> complex:
        grid = []
        for j in range(1, self.system.s + 1):
            a, b = self.system.interval(j)
            grid.append(np.linspace(a + 1e-4, b - 1e-4, 64))
        grid = np.concatenate(grid)
        vals = np.abs(self.varpi(grid))
        xr = float(grid[np.argmax(vals)])
        om = complex(self.varpi(xr))
        a = self.pole_row.a
        logs = np.log(np.abs(xr - self.nodes) + 0j) - np.log(1.0 - a * xr)
        return np.log(om + 0j) - np.sum(logs)

    @property
    def C(self) -> complex:
        with np.errstate(over="ignore"):
            return np.exp(self.log_C)

    # -- evaluator interface ----------------------------------------------------

    def r_values(self, x):
        return np.clip(self.map.varpi(x), -1.0, 1.0)

    def varpi(self, x):
        return self.up_ev.varpi(self.r_values(x))

    def varpi_prime(self, x):
        return self.up_ev.varpi_prime(self.r_values(x)) * self.map.r_prime(x)

    def gamma(self, x):
        """gamma of the composed scheme via the product identity."""
        return self.up_ev.phase.gamma(self.r_values(x)) * self.map.phase.gamma(x)

    def gamma_norm(self, grid_per_interval: int = 64) -> float:
        from ._search import golden_max

        best = -np.inf
        for j in range(1, self.system.s + 1):
            a, b = self.system.interval(j)
            ts = np.linspace(a, b, grid_per_interval)
            vals = self.gamma(ts)
            kk = int(np.argmax(vals))
            best = max(best, float(vals[kk]))
            lo, hi = ts[max(kk - 1, 0)], ts[min(kk + 1, len(ts) - 1)]
            if hi > lo:
                _, v = golden_max(lambda t: float(self.gamma(np.asarray(t))), lo, hi, rel_tol=1e-9)
                best = max(best, v)
        return best

    def as_scheme(self) -> InterpolationScheme:
        """Downstairs scheme (system, pulled-back row, pulled-back nodes)."""
        return make_scheme(self.system, self.pole_row, self.node_row)

    def nearest_pole_distance(self, points) -> np.ndarray:
        """min_k |pole_k - t| over the finite downstairs poles, per point."""
        pos = self.pole_positions
        pos = pos[np.isfinite(pos.real) & np.isfinite(pos.imag)]
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        return np.min(np.abs(pos[None, :] - pts[:, None]), axis=1)


def _symmetrize_conjugates(roots: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Make conjugate root pairs exactly conjugate and near-real roots real."""
    roots = np.asarray(roots, dtype=complex).copy()
    finite = np.isfinite(roots.real) & np.isfinite(roots.imag)
    idx = np.nonzero(finite)[0]
    scale = max(1.0, float(np.max(np.abs(roots[idx]))) if idx.size else 1.0)
    used = set()
    for i in idx:
        if i in used:
            continue
        z = roots[i]
        if abs(z.imag) <= tol * scale:
            roots[i] = complex(z.real, 0.0)
            used.add(i)
            continue
        best, bdist = None, np.inf
        for j in idx:
            if j == i or j in used:
                continue
            dd = abs(roots[j] - z.conjugate())
            if dd < bdist:
                best, bdist = j, dd
        if best is not None and bdist <= tol * scale:
            pair = 0.5 * (z + roots[best].conjugate())
            roots[i] = pair
            roots[best] = pair.conjugate()
            used.update((i, best))
        else:
            used.add(i)
    return roots


def compose_scheme(rmap: RationalMap, upstairs: InterpolationScheme, tol: float = 1e-12) -> ComposedScheme:
    """Pull an upstairs scheme back through the map (see ComposedScheme)."""
    return ComposedScheme(rmap, upstairs, tol=tol)


# ---------------------------------------------------------------------------
# the fundamental-function comparison constant


def lemma1_ratio(composed: ComposedScheme, x_grid) -> float:
    """Empirical constant C: max over the grid and all (k, j) of the ratio of
    the downstairs fundamental |l_(k,j)(x)| to the three-term upstairs bound

        |l_k(r(x))| + |varpi_up(r(x))| (|l_k(1)/varpi_up(1)| + |l_k(-1)/varpi_up(-1)|).

    Grid points must stay >= 1e-6 away from the downstairs nodes (others are
    dropped).
    """
    x = np.asarray(x_grid, dtype=float)
    x = x[np.atleast_1d(composed.system.contains(x))]
    dmin = np.min(np.abs(x[:, None] - composed.nodes[None, :]), axis=1)
    x = x[dmin >= 1e-6]
    if x.size == 0:
        raise ValidationError("no grid points remain after removing near-node points")

    up = composed.up_ev
    y = composed.r_values(x)
    om_up = up.varpi(y)
    om_ends = np.array([up.varpi(np.array([1.0]))[0], up.varpi(np.array([-1.0]))[0]])
    if np.any(np.abs(om_ends) < 1e-300):
        raise NumericalError("degenerate endpoint normalization: |varpi_up(+-1)| ~ 0")
    ynodes, wup = up.nodes, up.weights
    # upstairs fundamentals on the mapped grid (limit branch near nodes)
    diff = y[:, None] - ynodes[None, :]
    near = np.abs(diff) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        Lup = np.abs(om_up[:, None] / (wup[None, :] * diff))
    if np.any(near):
        rows = np.nonzero(near.any(axis=1))[0]
        vpr = np.abs(up.varpi_prime(y[rows]))
        for rr, vv in zip(rows, vpr):
            cols = np.nonzero(near[rr])[0]
            Lup[rr, cols] = vv / np.abs(wup[cols])
    ends = (
        1.0 / np.abs(wup * (1.0 - ynodes) * om_ends[0])
        + 1.0 / np.abs(wup * (-1.0 - ynodes) * om_ends[1])
    )
    rhs = Lup + np.abs(om_up)[:, None] * ends[None, :]

    om_down = np.abs(composed.varpi(x))
    lhs = om_down[:, None] / np.abs(composed.weights[None, :] * (x[:, None] - composed.nodes[None, :]))
    ratio = lhs / rhs[:, composed.owner]
    return float(np.max(ratio))


# ---------------------------------------------------------------------------
# accumulation families


@dataclass(frozen=True)
class FamilyMember:
    n: int
    composed: ComposedScheme
    nearest: np.ndarray  # distance of the nearest downstairs pole to each t_i


@dataclass(frozen=True)
class Theorem5Family:
    """Schemes whose poles accumulate at every point of F on [-1, 1]."""

    problem: ConstructionProblem
    map: RationalMap
    members: tuple[FamilyMember, ...]

    def fitted_exponent(self) -> float:
        """Least-squares slope of log(min nearest distance) vs log n."""
        ns = np.array([m.n for m in self.members], dtype=float)
        ds = np.array([float(np.min(m.nearest)) for m in self.members])
        A = np.vstack([np.log(ns), np.ones_like(ns)]).T
        slope, _ = np.linalg.lstsq(A, np.log(ds), rcond=None)[0]
        return float(slope)

    def to_jsonable(self) -> dict:
        return {
            "alpha": [float(a) for a in self.problem.alpha0],
            "k": self.problem.k,
            "F": [float(t) for t in self.problem.F],
            "targets": [str(t) for t in self.problem.targets],
            "poles_by_n": {
                str(m.n): [[float(z.real), float(z.imag)] for z in m.composed.pole_row.a]
                for m in self.members
            },
            "nearest_pole_distance": {
                str(m.n): [float(v) for v in m.nearest] for m in self.members
            },
        }


def upstairs_accumulation_row(n: int) -> PoleRow:
    """The upstairs row with one zero entry and n-1 entries equal to 1 - 1/n
    (poles at infinity and at n/(n-1), just outside the interval)."""
    if n < 2:
        raise ValidationError("the accumulation row needs n >= 2")
    return make_pole_row(np.concatenate([[0.0], np.full(n - 1, 1.0 - 1.0 / n)]), _SLIT)


def _upstairs_scheme(n: int) -> InterpolationScheme:
    from .chebmark import nodes as cm_nodes

    row = upstairs_accumulation_row(n)
    return make_scheme(_SLIT, row, cm_nodes(_SLIT, row))


def theorem5_family(
    F: Sequence[float],
    targets: Sequence | None,
    n_list: Sequence[int],
    tol: float = 1e-12,
) -> Theorem5Family:
    """Build the accumulation family: for each n the upstairs row
    (0, 1-1/n, ..., 1-1/n) with its Chebyshev-Markov nodes, pulled back
    through the construction map for F."""
    problem = solve_construction(F, targets)
    rmap = build_map(problem, tol=tol)
    members = []
    for n in n_list:
        composed = compose_scheme(rmap, _upstairs_scheme(int(n)), tol=tol)
        nearest = composed.nearest_pole_distance(problem.F)
        members.append(FamilyMember(n=int(n), composed=composed, nearest=nearest))
    return Theorem5Family(problem=problem, map=rmap, members=tuple(members))


@dataclass(frozen=True)
class Theorem6Family:
    """Two-level pullback: accumulation at F inside a several-interval set."""

    system: IntervalSystem
    F: np.ndarray
    base_map: RationalMap
    upstairs_points: np.ndarray  # deduplicated images y_j = r(t_j)
    y_groups: tuple[tuple[int, ...], ...]  # indices of F collapsing to each y
    upstairs_family: Theorem5Family
    members: tuple[FamilyMember, ...]

    def to_jsonable(self) -> dict:
        doc = self.upstairs_family.to_jsonable()
        doc.update(
            {
                "system": [float(v) for v in self.system.c],
                "F": [float(t) for t in self.F],
                "base_d": [float(v.real) for v in np.atleast_1d(self.base_map.d)],
                "upstairs_points": [float(v) for v in self.upstairs_points],
                "poles_by_n": {
                    str(m.n): [[float(z.real), float(z.imag)] for z in m.composed.pole_row.a]
                    for m in self.members
                },
                "nearest_pole_distance": {
                    str(m.n): [float(v) for v in m.nearest] for m in self.members
                },
            }
        )
        return doc


def theorem6_family(
    system: IntervalSystem,
    F: Sequence[float],
    m: int,
    n_list: Sequence[int],
    targets: Sequence | None = None,
    tol: float = 1e-12,
) -> Theorem6Family:
    """Accumulation at F inside J: build a regular base map r_m, send F to
    y_j = r_m(t_j), run the single-interval construction on the y's, and pull
    every resulting scheme back through r_m.

    Distinct t_j whose images collide (within 1e-9, e.g. mirror-symmetric
    configurations) share one upstairs accumulation point; the grouping is
    reported in y_groups.
    """
    Fv = np.asarray(F, dtype=float)
    if not np.all(system.contains(Fv, interior=True)):
        raise ValidationError("accumulation targets must lie in the interior of the intervals")
    if float(np.min(np.abs(Fv[:, None] - np.asarray(system.c)[None, :]))) < 1e-3:
        raise ValidationError("accumulation targets must stay >= 1e-3 away from the partition points")

    d = regular_base_map(system, m)
    base = build_map(system, d, tol=tol)
    y_raw = np.atleast_1d(base.varpi(Fv))
    if np.any(np.abs(y_raw) >= 1.0 - 1e-12):
        raise ValidationError("a target maps to +-1 (critical point of the base map)")

    groups: list[list[int]] = []
    y_unique: list[float] = []
    for i, yv in enumerate(y_raw):
        for gi, yu in enumerate(y_unique):
            if abs(yv - yu) < 1e-9:
                groups[gi].append(i)
                break
        else:
            y_unique.append(float(yv))
            groups.append([i])

    upstairs = theorem5_family(np.asarray(y_unique), targets, n_list, tol=tol)
    members = []
    for up_member in upstairs.members:
        mid = up_member.composed.as_scheme()
        final = compose_scheme(base, mid, tol=tol)
        nearest = final.nearest_pole_distance(Fv)
        members.append(FamilyMember(n=up_member.n, composed=final, nearest=nearest))
    return Theorem6Family(
        system=system,
        F=Fv,
        base_map=base,
        upstairs_points=np.asarray(y_unique),
        y_groups=tuple(tuple(g) for g in groups),
        upstairs_family=upstairs,
        members=tuple(members),
    )

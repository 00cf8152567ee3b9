"""Harmonic measures of interval unions seen from a pole.

For the domain C \\ J (J a union of s real intervals) the harmonic measure
of a boundary portion seen from a point p has an absolutely continuous
density on J.  With

    H(t)  = prod_j (t - c_{2j-1})(t - c_{2j}),
    R(z)  = sqrt(H(z))   (branch cut on J, R ~ z^s at +infinity),

the density at an interior point t of the j-th interval is

    w_p(t) = sigma_j * Re[ R(p)/(p - t) + q(t) ] / (pi * sqrt(-H(t))),

where sigma_j = (-1)^(s-j) fixes the branch of sqrt(-H) on each interval and
q is the unique polynomial of degree <= s-2 making the conjugate Green
potential single-valued across every gap:

    int_{gap g} [ R(p)/(p - t) + q(t) ] / R(t) dt = 0,   g = 1..s-1.

A pole at infinity uses the limiting numerator t^(s-1) + q(t).  The total
mass is then automatically 1 and the per-interval masses are the harmonic
measures omega_j(p).  Complex p is handled by solving the (complex) gap
conditions and taking the real part of the numerator, which equals the
average of the densities for p and conj(p).

Everything integrates through the substitution t = m + h*cos(theta), which
turns inverse-square-root endpoint singularities into smooth integrands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .intervals import (
    MIN_POLE_DIST,
    IntervalSystem,
    NumericalError,
    ValidationError,
)

_TWO_PI = 2.0 * math.pi


def is_inf_pole(p) -> bool:
    """True when p encodes the pole at infinity (reciprocal value 0)."""
    if p is None:
        return True
    p = complex(p)
    return not (math.isfinite(p.real) and math.isfinite(p.imag))


def sqrt_H(system: IntervalSystem, z):
    """The branch of sqrt(H) cut along J with R(z) ~ z^s at +infinity.

    Implemented as the product of principal square roots of (z - c_i); the
    cuts of consecutive factors cancel outside J.  Real on gaps and on both
    exterior rays, with sign (-1)^(s-j) on the j-th gap.
    """
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    for ci in system.c:
        out = out * np.sqrt(z - ci)
    return out if out.ndim else out[()]


# ---------------------------------------------------------------------------
# adaptive Gauss-Legendre in the cosine variable


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


@dataclass(frozen=True)
class QuadratureRule:
    """Adaptive Gauss-Legendre rule for integrands with inverse-square-root
    endpoint singularities, applied after the substitution t = m + h*cos(theta).

    tol is the absolute error target for a full [0, pi] integral; panels are
    bisected until a (order)-vs-(2*order) comparison locally meets the
    per-length share of tol.
    """

    tol: float = 1e-12
    order: int = 16
    max_depth: int = 48

    def integrate(self, f, lo: float, hi: float) -> np.ndarray:
        """Integrate a vector-valued f(theta)->(..., m) over [lo, hi]."""
        if hi <= lo:
            probe = np.asarray(f(np.array([0.5 * (lo + hi)])))
            return np.zeros(probe.shape[:-1])
        span = hi - lo
        stack = [(lo, hi, 0)]
        total = None
        while stack:
            a, b, depth = stack.pop()
            coarse = self._panel(f, a, b, self.order)
            fine = self._panel(f, a, b, 2 * self.order)
            err = np.max(np.abs(fine - coarse))
            if err <= self.tol * (b - a) / span or depth >= self.max_depth or (b - a) < 1e-14:
                total = fine if total is None else total + fine
            else:
                mid = 0.5 * (a + b)
                stack.append((a, mid, depth + 1))
                stack.append((mid, b, depth + 1))
        return total

    def _panel(self, f, a: float, b: float, order: int) -> np.ndarray:
        x, w = _gl(order)
        h = 0.5 * (b - a)
        vals = np.asarray(f(a + h * (x + 1.0)))
        return h * (vals @ w)

    def nodes_weights(self, c_l: float, c_r: float, order: int | None = None):
        """Plain (non-adaptive) nodes/weights in t for the weight
        1/sqrt((t - c_l)(c_r - t)) on [c_l, c_r]; sum(w * f(t)) approximates
        the weighted integral and is exact for f = 1 (total pi)."""
        x, w = _gl(order or 4 * self.order)
        theta = 0.5 * math.pi * (x + 1.0)
        m, h = 0.5 * (c_l + c_r), 0.5 * (c_r - c_l)
        return m + h * np.cos(theta), 0.5 * math.pi * w


def _cofactor(system: IntervalSystem, skip: tuple[int, int]):
    """prod_{i not in skip} (t - c_i) as a vectorized callable."""
    cs = [ci for i, ci in enumerate(system.c) if i not in skip]

    def poly(t):
        out = np.ones_like(t)
        for ci in cs:
            out = out * (t - ci)
        return out

    return poly


# ---------------------------------------------------------------------------
# density families


class DensityFamily:
    """Green-density data for a multiset of poles over one interval system.

    Poles are given by their distinct locations (np.inf entries mean the pole
    at infinity) and multiplicities.  The gap-condition corrections are
    solved for all poles in one linear system sharing the period matrix, and
    per-interval masses (harmonic measures) are cached.
    """

    def __init__(
        self,
        system: IntervalSystem,
        poles,
        counts=None,
        tol: float = 1e-12,
        min_pole_dist: float = MIN_POLE_DIST,
    ):
        self.system = system
        p = np.asarray(poles, dtype=complex)
        if p.ndim == 0:
            p = p[None]
        self.p = p
        self.counts = np.ones(len(p)) if counts is None else np.asarray(counts, dtype=float)
        self.rule = QuadratureRule(tol=tol)
        s = system.s
        self.interval_signs = np.array([(-1.0) ** (s - j) for j in range(1, s + 1)])
        self.gap_signs = np.array([(-1.0) ** (s - g) for g in range(1, s)])

        finite = ~np.isinf(p.real) & ~np.isinf(p.imag)
        if np.any(np.abs(p.imag[~finite]) >= 0):
            pass
        self.finite_mask = finite
        if np.any(finite):
            dist = np.atleast_1d(system.distance(p[finite]))
            if np.min(dist) < min_pole_dist:
                k = int(np.argmin(dist))
                raise ValidationError(
                    f"pole {p[finite][k]} at distance {dist[k]:.3e} < {min_pole_dist} from the intervals"
                )
        self.Rp = np.zeros(len(p), dtype=complex)
        self.Rp[finite] = np.atleast_1d(sqrt_H(system, p[finite]))

        self.corr = self._solve_corrections()
        self.masses = self._interval_masses()

    # -- numerators ---------------------------------------------------------

    def _raw_numerator(self, t, which=slice(None)):
        """Complex numerators N_p(t) = F_p(t) + q_p(t), shape (U, len(t))."""
        t = np.asarray(t, dtype=float)
        p = self.p[which]
        Rp = self.Rp[which]
        corr = self.corr[which]
        fin = self.finite_mask[which]
        out = np.empty((len(p), t.size), dtype=complex)
        if np.any(fin):
            out[fin] = Rp[fin, None] / (p[fin, None] - t[None, :])
        if np.any(~fin):
            out[~fin] = t[None, :] ** (self.system.s - 1)
        if corr.shape[1]:
            out += np.polynomial.polynomial.polyval(t, corr.T, tensor=True)
        return out

    def numerator(self, t):
        """Multiplicity-weighted real numerator sum_u count_u * Re N_u(t)."""
        return self.counts @ self._raw_numerator(t).real

    def numerator_prime(self, t):
        """t-derivative of the weighted numerator sum."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((len(self.p), t.size), dtype=complex)
        fin = self.finite_mask
        if np.any(fin):
            out[fin] = self.Rp[fin, None] / (self.p[fin, None] - t[None, :]) ** 2
        s = self.system.s
        if np.any(~fin) and s >= 2:
            out[~fin] = (s - 1) * t[None, :] ** (s - 2)
        if self.corr.shape[1] > 1:
            dcorr = np.polynomial.polynomial.polyder(self.corr.T)
            out += np.polynomial.polynomial.polyval(t, dcorr, tensor=True)
        return self.counts @ out.real

    # -- linear algebra for the gap conditions ------------------------------

    def _solve_corrections(self) -> np.ndarray:
        s = self.system.s
        U = len(self.p)
        if s == 1:
            return np.zeros((U, 0), dtype=complex)

        rows = []
        rhs = []
        for g in range(1, s):
            a, b = self.system.gap(g)
            m, h = 0.5 * (a + b), 0.5 * (b - a)
            smooth = _cofactor(self.system, (2 * g - 1, 2 * g))

            def fmono(theta, m=m, h=h, smooth=smooth):
                t = m + h * np.cos(theta)
                g_t = -smooth(t)
                return (t[None, :] ** np.arange(s - 1)[:, None]) / np.sqrt(g_t)[None, :]

            def fpole(theta, m=m, h=h, smooth=smooth):
                t = m + h * np.cos(theta)
                g_t = np.sqrt(-smooth(t))
                vals = np.zeros((U, t.size), dtype=complex)
                fin = self.finite_mask
                if np.any(fin):
                    vals[fin] = self.Rp[fin, None] / (self.p[fin, None] - t[None, :])
                if np.any(~fin):
                    vals[~fin] = t[None, :] ** (s - 1)
                return vals / g_t[None, :]

            rows.append(self.rule.integrate(fmono, 0.0, math.pi))
            rhs.append(-self.rule.integrate(fpole, 0.0, math.pi))

        M = np.array(rows)  # (s-1, s-1), gap sign cancels between M and rhs
        B = np.array(rhs)  # (s-1, U)
        try:
            corr = np.linalg.solve(M, B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular period matrix for system {self.system.c}") from exc
        scale = max(1.0, float(np.max(np.abs(B))))
        resid = float(np.max(np.abs(M @ corr - B)))
        if resid > 1e-9 * scale:
            raise NumericalError(f"gap-period solve residual {resid:.3e} exceeds tolerance")
        return corr.T  # (U, s-1)

    # -- masses and partial measures ----------------------------------------

    def _interval_integrand(self, j: int):
        a, b = self.system.interval(j)
        m, h = 0.5 * (a + b), 0.5 * (b - a)
        smooth = _cofactor(self.system, (2 * j - 2, 2 * j - 1))

        def f(theta):
            t = m + h * np.cos(theta)
            return self._raw_numerator(t).real / np.sqrt(smooth(t))[None, :]

        return f

    def _interval_masses(self) -> np.ndarray:
        s = self.system.s
        out = np.empty((len(self.p), s))
        for j in range(1, s + 1):
            vals = self.rule.integrate(self._interval_integrand(j), 0.0, math.pi)
            out[:, j - 1] = self.interval_signs[j - 1] / math.pi * vals
        return out

    def partial(self, x: float, which=None) -> np.ndarray:
        """Per-pole harmonic measure of J intersect [c_1, x], shape (U,)."""
        system = self.system
        if x <= system.left:
            return np.zeros(len(self.p))
        if x >= system.right:
            return self.masses.sum(axis=1)
        reg = system.locate(x)
        if reg.kind == "gap":
            return self.masses[:, : reg.index].sum(axis=1)
        if reg.kind == "endpoint":
            j = (reg.index + 1) // 2
            return self.masses[:, : j if reg.index % 2 == 0 else j - 1].sum(axis=1)
        j = reg.index
        a, b = system.interval(j)
        m, h = 0.5 * (a + b), 0.5 * (b - a)
        theta_x = math.acos(min(1.0, max(-1.0, (x - m) / h)))
        vals = self.rule.integrate(self._interval_integrand(j), theta_x, math.pi)
        out = self.masses[:, : j - 1].sum(axis=1)
        return out + self.interval_signs[j - 1] / math.pi * vals

    def combined_partial(self, x: float) -> float:
        """Multiplicity-weighted total partial measure at x."""
        return float(self.counts @ self.partial(x))

    def combined_masses(self) -> np.ndarray:
        """Multiplicity-weighted per-interval masses, shape (s,)."""
        return self.counts @ self.masses

    def density(self, t):
        """Weighted density sum at interior points t of J (vectorized)."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if not np.all(self.system.contains(t, interior=True)):
            raise ValidationError("density requested outside the open intervals")
        sign = np.empty_like(t)
        for j in range(1, self.system.s + 1):
            a, b = self.system.interval(j)
            sign[(t > a) & (t < b)] = self.interval_signs[j - 1]
        vals = sign * self.numerator(t) / (math.pi * np.sqrt(-self.system.eval_H(t).real))
        return vals[0] if scalar else vals


@dataclass(frozen=True)
class GreenDensity:
    """Harmonic-measure density for a single pole (see module docstring)."""

    system: IntervalSystem
    pole: complex
    corr: np.ndarray
    interval_signs: np.ndarray
    gap_signs: np.ndarray
    interval_masses: np.ndarray
    _family: DensityFamily

    def numerator(self, t):
        return self._family._raw_numerator(np.atleast_1d(np.asarray(t, float))).real[0]

    def density(self, t):
        return self._family.density(t)

    def partial(self, x: float) -> float:
        return float(self._family.partial(x)[0])

    def total_mass(self) -> float:
        return float(self.interval_masses.sum())


def green_density(system: IntervalSystem, p, tol: float = 1e-12) -> GreenDensity:
    """Density representation of the harmonic measure seen from p (p may be
    infinite).  Raises ValidationError when p is too close to the intervals
    and NumericalError when the gap-period system cannot be solved."""
    p = complex(np.inf) if is_inf_pole(p) else complex(p)
    fam = DensityFamily(system, [p], tol=tol)
    return GreenDensity(
        system=system,
        pole=p,
        corr=fam.corr[0],
        interval_signs=fam.interval_signs,
        gap_signs=fam.gap_signs,
        interval_masses=fam.masses[0],
        _family=fam,
    )


def hm_partial(system: IntervalSystem, p, x: float, tol: float = 1e-12) -> float:
    """Harmonic measure omega(p, J intersect [c_1, x], C \\ J) by quadrature
    of the Green density; nondecreasing in x, 0 at c_1 and 1 at c_{2s}."""
    if x < system.left - 1e-15 or x > system.right + 1e-15:
        raise ValidationError(f"x={x} outside [{system.left}, {system.right}]")
    return green_density(system, p, tol=tol).partial(x)


def hm_interval(system: IntervalSystem, p, j: int, tol: float = 1e-12) -> float:
    """omega_j(p): harmonic measure of the j-th interval seen from p."""
    if not 1 <= j <= system.s:
        raise ValidationError(f"interval index {j} out of range 1..{system.s}")
    return float(green_density(system, p, tol=tol).interval_masses[j - 1])


# ---------------------------------------------------------------------------
# single-interval closed forms


def hm_slit_real(a: float, x: float) -> float:
    """omega(1/a, [-1, x], C \\ [-1,1]) for a real reciprocal pole value.

    Equals 1 - arccos((x - a)/(1 - a*x))/pi; a = 0 is the pole at infinity.
    """
    a = float(a)
    if abs(a) >= 1.0:
        raise ValidationError(f"|a| must be < 1, got {a}")
    x = float(x)
    if not -1.0 <= x <= 1.0:
        raise ValidationError(f"x={x} outside [-1, 1]")
    u = (x - a) / (1.0 - a * x)
    return 1.0 - math.acos(min(1.0, max(-1.0, u))) / math.pi


_SLIT = None


def _slit_system() -> IntervalSystem:
    global _SLIT
    if _SLIT is None:
        from .intervals import validate_system

        _SLIT = validate_system([-1.0, 1.0])
    return _SLIT


def hm_slit(p, x: float) -> float:
    """omega(p, [-1, x], C \\ [-1,1]) for any pole p off the slit.

    p is sent to the exterior of the unit circle by the inverse Joukowski
    map w = p + sqrt(p^2 - 1) (|w| > 1 branch); the slit portion [-1, x]
    corresponds to the arc through -1 between e^{+-i arccos x}, whose
    exterior-disk harmonic measure is (2*alpha - ell)/(2*pi) with alpha the
    angle the arc subtends at 1/w and ell its length.
    """
    x = float(x)
    if not -1.0 <= x <= 1.0:
        raise ValidationError(f"x={x} outside [-1, 1]")
    psi = math.acos(x)
    if is_inf_pole(p):
        return 1.0 - psi / math.pi
    p = complex(p)
    if abs(p.imag) == 0.0 and -1.0 <= p.real <= 1.0:
        raise ValidationError(f"pole {p} lies on the slit")
    if x == 1.0:
        return 1.0
    if x == -1.0:
        return 0.0
    w = p + complex(sqrt_H(_slit_system(), p))
    zeta = 1.0 / w
    e1 = complex(math.cos(psi), math.sin(psi))
    e2 = e1.conjugate()
    alpha = np.angle((e2 - zeta) / (e1 - zeta)) % _TWO_PI
    ell = _TWO_PI - 2.0 * psi
    return float((2.0 * alpha - ell) / _TWO_PI)


# ---------------------------------------------------------------------------
# walk-on-spheres oracle


def hm_oracle_mc(
    system: IntervalSystem,
    p,
    j: int,
    n_samples: int,
    seed: int = 0,
    band: float = 1e-6,
    max_steps: int = 10_000,
    batch: int = 250_000,
) -> tuple[float, float]:
    """Walk-on-spheres estimate of omega_j(p) with its standard error.

    Simulates Brownian motion from p by jumping to a uniform point of the
    largest disk around the current position avoiding J, absorbing when the
    distance falls below band (the slit has equal indicator values on both
    sides, so no side resolution is needed).  The band keeps the bias below
    ~1e-3 of the estimate for the default width.  p must be finite.
    """
    if is_inf_pole(p):
        raise ValidationError("walk-on-spheres needs a finite start point; use a distant proxy")
    p = complex(p)
    if float(system.distance(p)) <= band:
        raise ValidationError("start point lies inside the absorption band")
    if not 1 <= j <= system.s:
        raise ValidationError(f"interval index {j} out of range 1..{system.s}")

    rng = np.random.default_rng(seed)
    ab = np.array([system.interval(i) for i in range(1, system.s + 1)])
    lo, hi = ab[:, 0], ab[:, 1]

    hits = 0
    done = 0
    while done < n_samples:
        k = min(batch, n_samples - done)
        zr = np.full(k, p.real)
        zi = np.full(k, p.imag)
        owner = np.full(k, -1, dtype=np.int64)
        alive = np.arange(k)
        for _ in range(max_steps):
            proj = np.clip(zr[alive, None], lo[None, :], hi[None, :])
            d = np.hypot(zr[alive, None] - proj, zi[alive, None])
            nearest = np.argmin(d, axis=1)
            dmin = d[np.arange(len(alive)), nearest]
            absorbed = dmin < band
            if np.any(absorbed):
                owner[alive[absorbed]] = nearest[absorbed]
                keep = ~absorbed
                alive = alive[keep]
                dmin = dmin[keep]
                if alive.size == 0:
                    break
            ang = rng.uniform(0.0, _TWO_PI, size=alive.size)
            zr[alive] += dmin * np.cos(ang)
            zi[alive] += dmin * np.sin(ang)
        if alive.size:
            # truncated walks are assigned to the currently nearest interval
            proj = np.clip(zr[alive, None], lo[None, :], hi[None, :])
            d = np.hypot(zr[alive, None] - proj, zi[alive, None])
            owner[alive] = np.argmin(d, axis=1)
        hits += int(np.count_nonzero(owner == j - 1))
        done += k

    est = hits / n_samples
    se = math.sqrt(max(est * (1.0 - est), 1e-300) / n_samples)
    return est, se

"""Interval systems, pole rows and node rows.

The basic geometry is a partition c_1 < c_2 < ... < c_{2s} of the real line
inducing the compact set

    J = [c_1, c_2] u [c_3, c_4] u ... u [c_{2s-1}, c_{2s}]

of s pairwise disjoint closed intervals.  Interpolation data on J consists of
a row of reciprocal pole values (a_k = 0 encodes a pole at infinity) and a
row of interpolation nodes in the interior of J.  All types are immutable
after construction and safe to share between workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

# Well-posedness floors: gaps narrower than MIN_GAP or poles closer than
# MIN_POLE_DIST to J make the quadrature ill-conditioned and are rejected.
MIN_GAP = 1e-12
MIN_POLE_DIST = 1e-12


class ValidationError(ValueError):
    """A domain object violates one of its invariants."""


class NumericalError(RuntimeError):
    """A solver failed to reach its target residual."""


class Region(NamedTuple):
    """Classification of a real point relative to an interval system.

    kind is one of "interval", "gap", "endpoint", "exterior".  index is the
    1-based interval/gap number, the 1-based endpoint number for endpoints,
    and 0 (left) or 1 (right) for exterior points.
    """

    kind: str
    index: int


def _as_readonly(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class IntervalSystem:
    """A partition c_1 < ... < c_{2s} and the interval union it induces."""

    c: np.ndarray

    @property
    def s(self) -> int:
        return len(self.c) // 2

    @property
    def left(self) -> float:
        return float(self.c[0])

    @property
    def right(self) -> float:
        return float(self.c[-1])

    def interval(self, j: int) -> tuple[float, float]:
        """Endpoints of the j-th interval, j = 1..s."""
        return float(self.c[2 * j - 2]), float(self.c[2 * j - 1])

    def gap(self, j: int) -> tuple[float, float]:
        """Endpoints of the j-th gap, j = 1..s-1."""
        return float(self.c[2 * j - 1]), float(self.c[2 * j])

    def eval_H(self, x):
        """H(x) = prod_j (x - c_{2j-1})(x - c_{2j}); H < 0 exactly on Int J."""
        x = np.asarray(x, dtype=complex) if np.iscomplexobj(x) else np.asarray(x, dtype=float)
        out = np.ones_like(x)
        for ci in self.c:
            out = out * (x - ci)
        return out if out.ndim else out[()]

    def eval_H_prime(self, x):
        """Derivative of H by the product rule."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for i in range(len(self.c)):
            term = np.ones_like(x)
            for k, ck in enumerate(self.c):
                if k != i:
                    term = term * (x - ck)
            out = out + term
        return out if out.ndim else out[()]

    def locate(self, x: float, atol: float = 0.0) -> Region:
        """Classify x as interval/gap interior, endpoint, or exterior."""
        c = self.c
        if atol > 0.0:
            hit = np.nonzero(np.abs(c - x) <= atol)[0]
            if hit.size:
                return Region("endpoint", int(hit[0]) + 1)
        if x < c[0]:
            return Region("exterior", 0)
        if x > c[-1]:
            return Region("exterior", 1)
        idx = int(np.searchsorted(c, x))
        if idx < len(c) and c[idx] == x:
            return Region("endpoint", idx + 1)
        # x lies strictly between c[idx-1] and c[idx]
        if idx % 2 == 1:
            return Region("interval", (idx + 1) // 2)
        return Region("gap", idx // 2)

    def contains(self, x, interior: bool = False) -> np.ndarray:
        """Vectorized membership test for J (optionally its interior)."""
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for j in range(1, self.s + 1):
            a, b = self.interval(j)
            if interior:
                inside |= (x > a) & (x < b)
            else:
                inside |= (x >= a) & (x <= b)
        return inside

    def distance(self, z) -> np.ndarray:
        """Distance from complex point(s) z to the set J."""
        z = np.asarray(z, dtype=complex)
        d = np.full(z.shape, np.inf)
        for j in range(1, self.s + 1):
            a, b = self.interval(j)
            proj = np.clip(z.real, a, b)
            d = np.minimum(d, np.hypot(z.real - proj, z.imag))
        return d if d.ndim else d[()]

    def to_json(self) -> str:
        return json.dumps({"c": [float(v) for v in self.c]})


def validate_system(c: Sequence[float]) -> IntervalSystem:
    """Validate a partition vector and build the interval system.

    Raises ValidationError naming the violated invariant: odd length,
    non-finite entries, non-increasing values, or a gap narrower than
    MIN_GAP.
    """
    arr = np.asarray(c, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or arr.size % 2 != 0:
        raise ValidationError(f"partition must have even positive length, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("partition entries must be finite")
    d = np.diff(arr)
    if np.any(d <= 0):
        k = int(np.argmax(d <= 0))
        raise ValidationError(
            f"partition not strictly increasing at position {k}: c[{k}]={arr[k]} >= c[{k + 1}]={arr[k + 1]}"
        )
    # gaps between consecutive intervals must be nonempty
    for j in range(1, arr.size // 2):
        if arr[2 * j] - arr[2 * j - 1] < MIN_GAP:
            raise ValidationError(f"gap {j} narrower than {MIN_GAP}")
    return IntervalSystem(c=_as_readonly(arr))


@dataclass(frozen=True)
class PoleRow:
    """One row of reciprocal pole values a_k (a_k = 0 means pole at infinity).

    kappa counts the leading zero entries and n1 is the split index of the
    sign-based enumeration used by the single-interval condition sums; both
    are stored rather than re-derived because the enumeration is ambiguous
    when several entries vanish.  in_unit_disk records whether the row
    satisfies the stricter |a_k| < 1 constraint; rows violating it are still
    admissible as long as every pole 1/a_k stays off J.
    """

    a: np.ndarray
    kappa: int
    n1: int
    in_unit_disk: bool

    @property
    def n(self) -> int:
        return len(self.a)

    def poles(self) -> np.ndarray:
        """Pole locations 1/a_k with np.inf standing in for a_k = 0."""
        out = np.full(self.n, complex(np.inf), dtype=complex)
        nz = self.a != 0
        out[nz] = 1.0 / self.a[nz]
        return out

    def unique(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct reciprocal values and their multiplicities."""
        vals, counts = np.unique(self.a, return_counts=True)
        return vals, counts


def make_pole_row(
    a: Sequence[complex],
    system: IntervalSystem | None = None,
    kappa: int | None = None,
    n1: int | None = None,
    min_pole_dist: float = MIN_POLE_DIST,
) -> PoleRow:
    """Build and validate a pole row.

    When a system is supplied, every nonzero a_k must put its pole 1/a_k at
    distance >= min_pole_dist from J.  Nonreal entries must come in conjugate
    pairs.  kappa defaults to the number of zero entries and n1 to
    kappa + #(Re a > 0), matching the canonical enumeration; both may be
    overridden since the enumeration does not determine them in degenerate
    rows.
    """
    arr = np.asarray(a, dtype=complex)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("pole row must be a nonempty vector")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("pole row entries must be finite")

    nonreal = arr[arr.imag != 0]
    if nonreal.size:
        up = np.sort_complex(nonreal[nonreal.imag > 0])
        dn = np.sort_complex(np.conj(nonreal[nonreal.imag < 0]))
        scale = np.max(np.abs(arr)) if arr.size else 1.0
        if up.size != dn.size or not np.allclose(up, dn, rtol=1e-9, atol=1e-12 * max(1.0, scale)):
            raise ValidationError("nonreal reciprocal values must form conjugate pairs")

    if system is not None:
        nz = arr[arr != 0]
        if nz.size:
            dist = system.distance(1.0 / nz)
            bad = np.nonzero(np.atleast_1d(dist) < min_pole_dist)[0]
            if bad.size:
                k = int(bad[0])
                raise ValidationError(
                    f"pole 1/a at {1.0 / nz[k]} lies within {min_pole_dist} of the interval set"
                )

    nzeros = int(np.count_nonzero(arr == 0))
    if kappa is None:
        kappa = nzeros
    if kappa < 0 or kappa > arr.size:
        raise ValidationError(f"kappa={kappa} out of range for row of length {arr.size}")
    if n1 is None:
        n1 = kappa + int(np.count_nonzero(arr.real > 0))
    if not (0 <= n1 <= arr.size):
        raise ValidationError(f"n1={n1} out of range for row of length {arr.size}")

    return PoleRow(
        a=_as_readonly(arr, dtype=complex),
        kappa=kappa,
        n1=n1,
        in_unit_disk=bool(np.all(np.abs(arr) < 1)),
    )


def zeros_row(n: int) -> PoleRow:
    """Row of n poles at infinity (polynomial interpolation)."""
    return make_pole_row(np.zeros(n))


@dataclass(frozen=True)
class NodeRow:
    """Strictly decreasing interpolation nodes in the interior of J."""

    x: np.ndarray

    @property
    def n(self) -> int:
        return len(self.x)


def make_node_row(x: Sequence[float], system: IntervalSystem) -> NodeRow:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("node row must be a nonempty vector")
    if np.any(np.diff(arr) >= 0):
        raise ValidationError("nodes must be strictly decreasing")
    if not np.all(system.contains(arr, interior=True)):
        bad = arr[~system.contains(arr, interior=True)][0]
        raise ValidationError(f"node {bad} not in the interior of the interval set")
    return NodeRow(x=_as_readonly(arr))


@dataclass(frozen=True)
class InterpolationScheme:
    """An interval system together with matching pole and node rows."""

    system: IntervalSystem
    poles: PoleRow
    nodes: NodeRow

    @property
    def n(self) -> int:
        return self.nodes.n


def make_scheme(system: IntervalSystem, poles: PoleRow, nodes: NodeRow) -> InterpolationScheme:
    if poles.n != nodes.n:
        raise ValidationError(f"pole row length {poles.n} != node row length {nodes.n}")
    real_poles = poles.poles()
    real_poles = real_poles[np.isfinite(real_poles) & (real_poles.imag == 0)].real
    if real_poles.size:
        dmin = np.min(np.abs(nodes.x[:, None] - real_poles[None, :]))
        if dmin < MIN_POLE_DIST:
            raise ValidationError("a node coincides with a real pole")
    return InterpolationScheme(system=system, poles=poles, nodes=nodes)


def scheme_to_json(system: IntervalSystem, poles: PoleRow, nodes: NodeRow | None = None) -> str:
    """Serialize a system plus pole row (and optional nodes) to JSON."""
    doc = {
        "c": [float(v) for v in system.c],
        "poles": [{"re": float(v.real), "im": float(v.imag)} for v in poles.a],
        "kappa": poles.kappa,
        "n1": poles.n1,
    }
    if nodes is not None:
        doc["nodes"] = [float(v) for v in nodes.x]
    return json.dumps(doc, indent=None, separators=(",", ":"))


def scheme_from_json(doc: str) -> tuple[IntervalSystem, PoleRow, NodeRow | None]:
    """Inverse of scheme_to_json; revalidates everything on the way in."""
    data = json.loads(doc)
    system = validate_system(data["c"])
    a = np.array([complex(p["re"], p["im"]) for p in data["poles"]])
    poles = make_pole_row(a, system, kappa=data.get("kappa"), n1=data.get("n1"))
    nodes = None
    if data.get("nodes") is not None:
        nodes = make_node_row(np.asarray(data["nodes"], dtype=float), system)
    return system, poles, nodes

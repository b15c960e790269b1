"""Empirical and periodic measures, Birkhoff averages, the truncated weak*
metric, and spectrum comparison reports.

Measures here are time-quadrature measures (trapezoid weights along a
trajectory), not histograms, so the weak* metric sees no binning artifacts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import flow as fl
from . import spectra as sp
from .errors import ConfigurationError

DEFAULT_FAMILY_SIZE = 20


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted sample measure: points with nonnegative weights summing to 1
    and a provenance tag."""

    points: np.ndarray
    weights: np.ndarray
    provenance: str = "trajectory-average"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < -1e-15) or abs(float(np.sum(w)) - 1.0) > 1e-9:
            raise ConfigurationError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w / np.sum(w))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, [f(p) for p in self.points]))


@dataclass(frozen=True)
class TestFunctionFamily:
    """Deterministically ordered bounded test functions f_1..f_n with recorded
    sup-norms: coordinate monomials of total degree <= 2 composed with tanh
    squashes at several scales."""

    exponents: tuple            # per function: (powers tuple, squash scale)
    sup_norms: tuple[float, ...]

    @property
    def size(self) -> int:
        return len(self.exponents)

    def evaluate(self, idx: int, x) -> float:
        powers, scale = self.exponents[idx]
        x = np.asarray(x, dtype=float)
        return math.tanh(scale * float(np.prod(x ** np.asarray(powers))))

    def function(self, idx: int):
        return lambda x: self.evaluate(idx, x)


def _monomials_up_to_degree(dim: int, max_degree: int):
    out = []
    for total in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            powers = [0] * dim
            for i in combo:
                powers[i] += 1
            out.append(tuple(powers))
    return out


def default_family(dim: int, box, n: int = DEFAULT_FAMILY_SIZE,
                   n_probe: int = 512, seed: int = 0) -> TestFunctionFamily:
    """Build the standard family: degree <= 2 monomials under tanh squashes at
    scales 1, 1/4, 1/16, ... until n functions exist.  Sup-norms are recorded
    by seeded sampling over the working box (tanh caps them at 1)."""
    monos = _monomials_up_to_degree(dim, 2)
    entries = []
    scale = 1.0
    while len(entries) < n:
        for powers in monos:
            entries.append((powers, scale))
            if len(entries) == n:
                break
        scale *= 0.25
    lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    rng = np.random.default_rng(seed)
    probes = lo + rng.random((n_probe, dim)) * (hi - lo)
    sup_norms = []
    for powers, s in entries:
        vals = np.abs(np.tanh(s * np.prod(probes ** np.asarray(powers), axis=1)))
        sup_norms.append(max(float(np.max(vals)), 1e-6))
    return TestFunctionFamily(exponents=tuple(entries),
                              sup_norms=tuple(sup_norms))


@dataclass(frozen=True)
class ComparisonReport:
    """Per-index exponent gaps plus the weak* distance, with pass/fail at the
    configured thresholds (all gaps < eps; extreme-exponent sub-checks
    reported separately)."""

    measure_spectrum: tuple[float, ...]
    orbit_spectrum: tuple[float, ...]
    gaps: tuple[float, ...]
    d_m: float
    eps: float
    passed: bool
    largest_gap_ok: bool
    smallest_gap_ok: bool

    def to_json_dict(self):
        return {"schema_version": sp.SCHEMA_VERSION,
                "measure_spectrum": list(self.measure_spectrum),
                "orbit_spectrum": list(self.orbit_spectrum),
                "gaps": list(self.gaps), "d_m": self.d_m, "eps": self.eps,
                "passed": bool(self.passed),
                "largest_gap_ok": bool(self.largest_gap_ok),
                "smallest_gap_ok": bool(self.smallest_gap_ok)}

    def summary(self) -> str:
        lines = ["spectrum comparison",
                 f"  measure spectrum: {list(self.measure_spectrum)}",
                 f"  orbit spectrum:   {list(self.orbit_spectrum)}",
                 f"  per-index gaps:   {list(self.gaps)}",
                 f"  weak* distance:   {self.d_m:.6g}",
                 f"  all gaps < {self.eps}: {'pass' if self.passed else 'fail'}",
                 f"  largest exponent gap ok:  {self.largest_gap_ok}",
                 f"  smallest exponent gap ok: {self.smallest_gap_ok}"]
        return "\n".join(lines)


def birkhoff_average(f, traj: fl.Trajectory) -> float:
    """Time average (1/T) integral of f along the trajectory by trapezoid
    quadrature; degenerates to a point evaluation for zero-length spans."""
    if len(traj) == 0:
        raise ConfigurationError("empty trajectory")
    vals = np.array([f(x) for x in traj.xs], dtype=float)
    span = traj.t1 - traj.t0
    if span == 0.0:
        return float(vals[0])
    return float(np.trapezoid(vals, traj.ts) / span)


def empirical_measure(traj: fl.Trajectory) -> EmpiricalMeasure:
    """Trapezoid-weighted occupation measure of a trajectory."""
    n = len(traj)
    if n == 1:
        return EmpiricalMeasure(points=traj.xs, weights=np.array([1.0]))
    dt = np.diff(traj.ts)
    w = np.zeros(n)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return EmpiricalMeasure(points=traj.xs, weights=w / np.sum(w))


def periodic_measure(orbit) -> EmpiricalMeasure:
    """Time-uniform invariant measure on a closed orbit.  The duplicated
    closing sample carries half-weight at each end, so integrals equal the
    one-period Birkhoff average."""
    ts = np.asarray(orbit.ts, dtype=float)
    dt = np.diff(ts)
    w = np.zeros(len(ts))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return EmpiricalMeasure(points=np.asarray(orbit.xs, dtype=float),
                            weights=w / np.sum(w),
                            provenance="periodic-orbit")


def weak_star_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                       fam: TestFunctionFamily) -> float:
    """Truncated weak* metric: sum over the family of
    |mu(f_i) - nu(f_i)| / (2^i ||f_i||)."""
    if fam.size == 0:
        raise ConfigurationError("test function family is empty")
    total = 0.0
    for i in range(fam.size):
        f = fam.function(i)
        gap = abs(mu.integrate(f) - nu.integrate(f))
        total += gap / (2.0 ** (i + 1) * fam.sup_norms[i])
    return total


def compare_spectra(mu_spec: sp.LyapunovSpectrum, orbit_spec: sp.LyapunovSpectrum,
                    eps: float, d_m: float = math.nan) -> ComparisonReport:
    """Index-aligned exponent gaps after ascending sort; pass iff every gap is
    below eps.  The extreme-index gaps get their own flags since the largest
    and smallest exponents admit separate approximation statements."""
    a = tuple(sorted(mu_spec.exponents))
    b = tuple(sorted(orbit_spec.exponents))
    if len(a) != len(b):
        raise ConfigurationError(
            f"spectrum length mismatch: {len(a)} vs {len(b)}")
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    gaps = tuple(abs(x - y) for x, y in zip(a, b))
    passed = all(g < eps for g in gaps)
    return ComparisonReport(measure_spectrum=a, orbit_spectrum=b, gaps=gaps,
                            d_m=float(d_m), eps=eps, passed=passed,
                            largest_gap_ok=gaps[-1] < eps,
                            smallest_gap_ok=gaps[0] < eps)

"""Lyapunov spectra of scaled linear Poincare cocycles: Benettin QR
estimation, finite-time Oseledec subspaces, domination and cone tests,
exterior-power spectra, time-reversal identities, and the invertible-map
perturbation margin.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import field as vf
from . import flow as fl
from . import poincare as pc
from .errors import (ConfigurationError, DegenerateSpectrumError,
                     NumericalError, SingularityError)

SCHEMA_VERSION = 1
# Distinct exponents closer than max(GROUP_TOL_FLOOR, 5 * stderr) are merged.
GROUP_TOL_FLOOR = 1e-3


@dataclass(frozen=True)
class CocycleSequence:
    """Blocks A_i = psi*_T in transported orthonormal normal frames along an
    orbit, plus base-point metadata."""

    T: float
    blocks: np.ndarray            # (n, m, m)
    start_state: np.ndarray | None = None
    field_norms: np.ndarray | None = None   # |X| at the n+1 sample points
    states: np.ndarray | None = None        # sample states, if known

    def __post_init__(self):
        if self.T <= 0:
            raise ConfigurationError("block time T must be positive")
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ConfigurationError("blocks must be a stack of square matrices")
        if not np.all(np.isfinite(blocks)):
            raise NumericalError("cocycle blocks contain non-finite entries")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def dim(self) -> int:
        return self.blocks.shape[1]

    def to_json_dict(self):
        meta = {}
        if self.start_state is not None:
            meta["start_state"] = list(map(float, self.start_state))
        if self.field_norms is not None:
            meta["field_norms"] = list(map(float, self.field_norms))
        return {"schema_version": SCHEMA_VERSION, "T": self.T,
                "blocks": self.blocks.tolist(), "meta": meta}

    @classmethod
    def from_json_dict(cls, doc):
        meta = doc.get("meta", {})
        return cls(T=float(doc["T"]), blocks=np.asarray(doc["blocks"], dtype=float),
                   start_state=(np.asarray(meta["start_state"])
                                if "start_state" in meta else None),
                   field_norms=(np.asarray(meta["field_norms"])
                                if "field_norms" in meta else None))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


@dataclass(frozen=True)
class LyapunovSpectrum:
    """Exponents per unit time, ascending, with the grouped distinct values
    and their multiplicities."""

    exponents: tuple[float, ...]
    distinct: tuple[float, ...]
    multiplicities: tuple[int, ...]
    group_tol: float

    @property
    def gap_min(self) -> float:
        if len(self.distinct) < 2:
            return math.inf
        return min(b - a for a, b in zip(self.distinct, self.distinct[1:]))

    def to_json_dict(self):
        return {"schema_version": SCHEMA_VERSION,
                "exponents": list(self.exponents),
                "distinct": list(self.distinct),
                "multiplicities": list(self.multiplicities),
                "group_tol": self.group_tol}


@dataclass(frozen=True)
class SplittingEstimate:
    """Finite-time Oseledec subspaces per sample, in frame coordinates.
    bases[j][i] is an orthonormal (m x d_i) basis of E_i at sample j."""

    bases: tuple          # tuple over samples of tuples over blocks
    dimensions: tuple[int, ...]
    equivariance_residual: float

    @property
    def k(self) -> int:
        return len(self.dimensions)

    def block_basis(self, sample: int, block: int) -> np.ndarray:
        return self.bases[sample][block]

    def stacked(self, sample: int, blocks) -> np.ndarray:
        """Orthonormal basis of the direct sum of the given blocks."""
        cols = np.column_stack([self.bases[sample][b] for b in blocks])
        q, _ = np.linalg.qr(cols)
        return q


@dataclass(frozen=True)
class ConeParams:
    """Aperture rho > 1 and shrink factor gamma in (0,1) with gamma*rho > 1,
    relative to a reference splitting."""

    rho: float
    gamma: float
    split: SplittingEstimate

    def __post_init__(self):
        if not (self.rho > 1.0 and 0.0 < self.gamma < 1.0 and self.gamma * self.rho > 1.0):
            raise ConfigurationError("cone needs rho > 1, gamma in (0,1), gamma*rho > 1")


def constant_cocycle(A, n: int, T: float = 1.0) -> CocycleSequence:
    A = np.asarray(A, dtype=float)
    return CocycleSequence(T=T, blocks=np.broadcast_to(A, (n,) + A.shape).copy())


def build_cocycle(spec, x0, T: float, n: int, cfg=fl.DEFAULT_CONFIG,
                  k0: float | None = None) -> CocycleSequence:
    """Assemble n blocks of psi*_T along the orbit of x0 with transported
    frames.  Projection onto the out-frame is implicit in the basis inner
    products."""
    if n < 1:
        raise ConfigurationError("need at least one block")
    x = np.asarray(x0, dtype=float)
    frame = pc.frame_at(spec, x)
    if k0 is None:
        k0 = frame.field_norm  # local scale stand-in for the box bound
    blocks = np.empty((n, spec.dimension - 1, spec.dimension - 1))
    norms = [frame.field_norm]
    states = [x]
    for i in range(n):
        pc.check_regular(spec, x, k0)
        x_next, M = fl.flow_and_tangent(spec, x, T, cfg)
        frame_next = pc.transport_frame(spec, frame, x_next)
        scale = frame.field_norm / frame_next.field_norm
        blocks[i] = scale * (frame_next.basis.T @ (M @ frame.basis))
        x, frame = x_next, frame_next
        norms.append(frame.field_norm)
        states.append(x)
    return CocycleSequence(T=T, blocks=blocks, start_state=np.asarray(x0, dtype=float),
                           field_norms=np.array(norms), states=np.array(states))


def _group_exponents(exps: np.ndarray, tol: float):
    distinct = []
    mult = []
    for lam in exps:
        if distinct and lam - distinct[-1] < tol:
            # running mean keeps the group centroid stable
            distinct[-1] = (distinct[-1] * mult[-1] + lam) / (mult[-1] + 1)
            mult[-1] += 1
        else:
            distinct.append(float(lam))
            mult.append(1)
    return tuple(distinct), tuple(mult)


def benettin_spectrum(c: CocycleSequence) -> LyapunovSpectrum:
    """Finite-time QR estimate: accumulate A Q, re-factor each block, average
    log |diag R| / T.  Returns exponents per unit time in ascending order."""
    if c.n < 1:
        raise ConfigurationError("empty cocycle")
    m = c.dim
    q = np.eye(m)
    sums = np.zeros(m)
    sumsq = np.zeros(m)
    for A in c.blocks:
        z = A @ q
        q, r = np.linalg.qr(z)
        diag = np.diag(r)
        if np.any(diag == 0) or not np.all(np.isfinite(diag)):
            raise NumericalError("degenerate R diagonal in QR sweep")
        signs = np.sign(diag)
        q = q * signs
        logs = np.log(np.abs(diag))
        sums += logs
        sumsq += logs ** 2
    exps = sums / (c.n * c.T)
    var = np.maximum(sumsq / c.n - (sums / c.n) ** 2, 0.0)
    stderr = np.sqrt(var / max(c.n, 1)) / c.T
    order = np.argsort(exps)
    exps_sorted = exps[order]
    tol = max(GROUP_TOL_FLOOR, 5.0 * float(np.max(stderr)))
    distinct, mult = _group_exponents(exps_sorted, tol)
    return LyapunovSpectrum(exponents=tuple(float(e) for e in exps_sorted),
                            distinct=distinct, multiplicities=mult, group_tol=tol)


def _partial_product(blocks, start, stop):
    """blocks[stop-1] @ ... @ blocks[start]."""
    p = np.eye(blocks.shape[1])
    for i in range(start, stop):
        p = blocks[i] @ p
    return p


def _subspace_intersection(b1: np.ndarray, b2: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the (approximate) intersection of two spans,
    taken as the directions in span(b2) closest to span(b1)."""
    u, s, vt = np.linalg.svd(b1.T @ b2)
    basis = b2 @ vt.T[:, :dim]
    q, _ = np.linalg.qr(basis)
    return q


def principal_angle_distance(b1: np.ndarray, b2: np.ndarray) -> float:
    """sin of the largest principal angle between two subspaces given by
    orthonormal bases."""
    s = np.linalg.svd(b1.T @ b2, compute_uv=False)
    s = np.clip(s, -1.0, 1.0)
    return float(np.sqrt(max(0.0, 1.0 - np.min(s) ** 2)))


def oseledec_filtration(c: CocycleSequence, window: int = 20,
                        spectrum: LyapunovSpectrum | None = None) -> SplittingEstimate:
    """Finite-time Oseledec subspaces from SVDs of partial products.

    At each sample the slow filtration comes from right singular vectors of
    the forward partial product and the fast filtration from left singular
    vectors of the backward partial product; block i is the intersection of
    the matching filtration members.  Boundary samples fall back to the
    one-sided orthogonal complement."""
    if spectrum is None:
        spectrum = benettin_spectrum(c)
    if len(spectrum.distinct) > 1 and spectrum.gap_min <= spectrum.group_tol:
        raise DegenerateSpectrumError(
            f"spectrum gap {spectrum.gap_min:.3g} below tolerance {spectrum.group_tol:.3g}")
    dims = spectrum.multiplicities
    k = len(dims)
    m = c.dim
    n = c.n
    w = min(window, n)
    cum = np.cumsum((0,) + dims)     # ascending-exponent block boundaries
    all_bases = []
    for j in range(n + 1):
        f_stop = min(j + w, n)
        b_start = max(j - w, 0)
        have_fwd = f_stop > j
        have_bwd = b_start < j
        slow_filt = [None] * k   # slow_filt[i] spans E_1 + ... + E_{i+1}
        fast_filt = [None] * k   # fast_filt[i] spans E_{i+1} + ... + E_k
        if have_fwd:
            pf = _partial_product(c.blocks, j, f_stop)
            _, _, vt = np.linalg.svd(pf)
            v = vt.T  # columns ordered by decreasing singular value
            for i in range(k):
                slow_filt[i] = v[:, m - cum[i + 1]:]
        if have_bwd:
            pb = _partial_product(c.blocks, b_start, j)
            u, _, _ = np.linalg.svd(pb)
            for i in range(k):
                fast_filt[i] = u[:, :m - cum[i]]
        if not have_fwd:
            for i in range(k):
                fb = fast_filt[i]
                comp = fast_filt[i + 1] if i + 1 < k else np.zeros((m, 0))
                slow_filt[i] = _orth_complement(comp) if comp.shape[1] else np.eye(m)
        if not have_bwd:
            for i in range(k):
                comp = slow_filt[i - 1] if i > 0 else np.zeros((m, 0))
                fast_filt[i] = _orth_complement(comp) if comp.shape[1] else np.eye(m)
        sample_bases = []
        for i in range(k):
            sample_bases.append(_subspace_intersection(slow_filt[i], fast_filt[i],
                                                       dims[i]))
        all_bases.append(tuple(sample_bases))
    residual = 0.0
    for j in range(n):
        for i in range(k):
            mapped = c.blocks[j] @ all_bases[j][i]
            qm, _ = np.linalg.qr(mapped)
            residual = max(residual,
                           principal_angle_distance(qm, all_bases[j + 1][i]))
    return SplittingEstimate(bases=tuple(all_bases), dimensions=tuple(dims),
                             equivariance_residual=residual)


def _orth_complement(b: np.ndarray) -> np.ndarray:
    m = b.shape[0]
    q, _ = np.linalg.qr(np.column_stack([b, np.eye(m)]))
    return q[:, b.shape[1]:]


def restriction_norm(A: np.ndarray, basis: np.ndarray) -> float:
    """||A restricted to span(basis)|| (spectral norm of A on the subspace)."""
    return float(np.linalg.norm(A @ basis, ord=2))


def restriction_conorm(A: np.ndarray, basis: np.ndarray) -> float:
    """Mininorm m(A|span(basis)) = smallest singular value of A on the
    subspace."""
    s = np.linalg.svd(A @ basis, compute_uv=False)
    return float(s[-1]) if len(s) else 0.0


def _restricted_log_svals(blocks, start, stop, basis):
    """(log largest, log smallest) singular value of the partial product
    restricted to span(basis), computed by stepwise QR with log-space scaling
    so rates far below machine precision of the full product stay exact."""
    q, _ = np.linalg.qr(basis)
    k = q.shape[1]
    G = np.eye(k)
    log_scale = 0.0
    for i in range(start, stop):
        q, r = np.linalg.qr(blocks[i] @ q)
        G = r @ G
        n = np.linalg.norm(G, ord=2)
        if n == 0.0 or not np.isfinite(n):
            return -math.inf, -math.inf
        G /= n
        log_scale += math.log(n)
    s = np.linalg.svd(G, compute_uv=False)
    lo = (log_scale + math.log(s[-1])) if s[-1] > 0 else -math.inf
    return log_scale + math.log(s[0]), lo


def check_domination(c: CocycleSequence, split: SplittingEstimate, pair,
                     max_window: int = 30, max_starts: int = 50) -> dict:
    """Finite-window domination test for subbundle pair (E, F), each given as
    a list of split-block indices.  Fits log g(t) ~ log C - lambda t over
    window lengths t = j*T where

        g(j) = max_start ||prod|_E|| * ||prod^{-1}|_{F(end)}||,

    and reports the fitted rate and minimal feasible constant.  `satisfied`
    requires a positive rate and one-sided fit residuals within 10% of the
    total decay."""
    e_blocks, f_blocks = pair
    n = c.n
    js = np.arange(1, min(max_window, n) + 1)
    stride = max(1, n // max_starts)
    log_g = []
    for j in js:
        worst = -math.inf
        for start in range(0, n - j + 1, stride):
            be = split.stacked(start, e_blocks)
            bf = split.stacked(start, f_blocks)
            log_ne, _ = _restricted_log_svals(c.blocks, start, start + j, be)
            _, log_mf = _restricted_log_svals(c.blocks, start, start + j, bf)
            if not math.isfinite(log_mf):
                worst = math.inf
                break
            worst = max(worst, log_ne - log_mf)
        log_g.append(worst)
    log_g = np.array(log_g)
    ts = js * c.T
    if not np.all(np.isfinite(log_g)):
        return {"satisfied": False, "rate": 0.0, "constant": math.inf,
                "window_times": ts.tolist(), "log_gap": log_g.tolist()}
    # once the true gap sinks under the precision of the subspace estimates
    # the measured curve goes flat; fit only the prefix that still decays at
    # a rate comparable to the initial one (and stays above a hard floor)
    keep = log_g >= -30.0
    diffs = np.diff(log_g)
    if len(diffs) >= 3:
        ref = float(np.median(diffs[:max(3, len(diffs) // 10)]))
        if ref < 0:
            cut = len(log_g)
            for i, d in enumerate(diffs):
                if d > 0.5 * ref:
                    cut = i + 1
                    break
            keep &= np.arange(len(log_g)) < cut
    if np.count_nonzero(keep) >= 3:
        ts_fit, lg_fit = ts[keep], log_g[keep]
    else:
        ts_fit, lg_fit = ts, log_g
    slope, intercept = np.polyfit(ts_fit, lg_fit, 1)
    rate = -float(slope)
    log_c = float(np.max(lg_fit + rate * ts_fit))
    fit = intercept + slope * ts_fit
    max_pos_residual = float(np.max(lg_fit - fit))
    total_decay = rate * float(ts_fit[-1])
    # a rate at rounding scale means the gap is flat, not contracting
    satisfied = rate > 1e-8 and max_pos_residual <= 0.1 * max(total_decay, 1e-12)
    return {"satisfied": bool(satisfied), "rate": rate,
            "constant": float(math.exp(min(log_c, 700.0))),
            "max_positive_residual": max_pos_residual,
            "window_times": ts.tolist(), "log_gap": log_g.tolist()}


def _cone_coords(split: SplittingEstimate, sample: int, v: np.ndarray):
    """Block components of v in the splitting at a sample (norms per block)."""
    comps = []
    for i in range(split.k):
        b = split.block_basis(sample, i)
        comps.append(float(np.linalg.norm(b.T @ v)))
    return comps


def _in_cone(split, sample, v, rho) -> bool:
    comps = _cone_coords(split, sample, v)
    fast = comps[-1]
    return all(fast >= rho * cj - 1e-12 for cj in comps[:-1])


def check_cone_invariance(c: CocycleSequence, cone: ConeParams,
                          n_samples: int = 1000, seed: int = 0) -> bool:
    """Sample vectors on the boundary of the rho cone, push them through each
    block, and test membership in the wider gamma*rho cone (max-block norm).
    The margin factor gamma < 1 leaves room for the splitting estimate's own
    error."""
    rng = np.random.default_rng(seed)
    split = cone.split
    for bi in range(c.n):
        dims = split.dimensions
        for _ in range(max(1, n_samples // max(c.n, 1))):
            comps = [rng.standard_normal(d) for d in dims]
            slow_max = max(np.linalg.norm(comp) for comp in comps[:-1])
            if slow_max == 0.0:
                continue
            comps = [comp / slow_max for comp in comps]
            fast = comps[-1]
            fn = np.linalg.norm(fast)
            if fn == 0.0:
                continue
            comps[-1] = fast / fn * cone.rho
            v = np.zeros(c.dim)
            for i, comp in enumerate(comps):
                v += split.block_basis(bi, i) @ comp
            w = c.blocks[bi] @ v
            if not _in_cone(split, bi + 1, w, cone.gamma * cone.rho):
                return False
    return True


def exterior_power(A: np.ndarray, n: int) -> np.ndarray:
    """Compound matrix of n x n minors over lexicographic index sets.
    Multiplicative: wedge(AB) = wedge(A) wedge(B)."""
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if not 1 <= n <= m:
        raise ConfigurationError(f"exterior power order {n} out of range [1, {m}]")
    if n == 1:
        return A.copy()
    idx = list(itertools.combinations(range(m), n))
    out = np.empty((len(idx), len(idx)))
    for a, rows in enumerate(idx):
        for b, cols in enumerate(idx):
            out[a, b] = np.linalg.det(A[np.ix_(rows, cols)])
    return out


def exterior_spectrum(c: CocycleSequence, n: int) -> LyapunovSpectrum:
    """Benettin spectrum of the compound cocycle {wedge^n(A_i)}; for constant
    cocycles this is the multiset of n-fold sums of base exponents."""
    blocks = np.array([exterior_power(A, n) for A in c.blocks])
    return benettin_spectrum(CocycleSequence(T=c.T, blocks=blocks))


def time_reversal_spectrum(s: LyapunovSpectrum) -> LyapunovSpectrum:
    """Spectrum of the reversed flow: negate and reverse order (involution,
    multiplicities reversed)."""
    return LyapunovSpectrum(
        exponents=tuple(-e for e in reversed(s.exponents)),
        distinct=tuple(-x for x in reversed(s.distinct)),
        multiplicities=tuple(reversed(s.multiplicities)),
        group_tol=s.group_tol)


def reverse_cocycle(c: CocycleSequence) -> CocycleSequence:
    """Inverse-transpose-free reversal {A_{n-1}^{-1}, ..., A_0^{-1}} realizing
    the time-reversed cocycle on the same samples."""
    inv = np.array([np.linalg.inv(A) for A in c.blocks[::-1]])
    return CocycleSequence(T=c.T, blocks=inv)


def index_of(s: LyapunovSpectrum) -> int:
    """Total multiplicity of negative exponents."""
    return sum(m for x, m in zip(s.distinct, s.multiplicities) if x < 0)


def perturbation_margin(A: np.ndarray, eps1: float) -> float:
    """Margin sigma3 = (m(A)/||A||)(1 - exp(-eps1)): any B with ||B - I|| <=
    sigma3 guarantees ||A B v|| >= exp(-eps1) ||A v|| for all v."""
    A = np.asarray(A, dtype=float)
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 0.0 or not np.all(np.isfinite(s)):
        raise NumericalError("perturbation margin needs an invertible matrix")
    if eps1 <= 0:
        raise ConfigurationError("eps1 must be positive")
    return float(s[-1] / s[0] * (1.0 - math.exp(-eps1)))

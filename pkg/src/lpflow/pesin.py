"""Finite-window hyperbolicity certificates: Pesin-block membership tests,
greedy scanning for quasi-hyperbolic strings, and near-return detection among
block members.

Every certificate or candidate emitted here can be re-verified by an
independent recomputation; the scanners keep no hidden state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import spectra as sp
from .errors import ConfigurationError, InsufficientDataError

# Pairs closer than this many blocks along the orbit are not near-returns.
MIN_RETURN_SEPARATION = 3
# slack for exact-boundary inequality checks (products like e^{-2T} vs
# thresholds e^{-eta T} that coincide analytically)
MARGIN_TOL = 1e-9


@dataclass(frozen=True)
class PesinBlockParams:
    """Block time T, per-block rate eta (products bounded by C e^{-n eta}),
    constant C >= 1, and singularity clearance 1/C."""

    T: float
    eta: float
    C: float

    def __post_init__(self):
        if self.T <= 0 or self.eta <= 0 or self.C < 1.0:
            raise ConfigurationError("need T > 0, eta > 0, C >= 1")

    @property
    def clearance(self) -> float:
        return 1.0 / self.C


@dataclass(frozen=True)
class StringCertificate:
    """A quasi-hyperbolic string: uniform partition times, per-gap restricted
    norms/co-norms, and the three log-margin sequences (all must be >= 0)."""

    start_index: int
    times: tuple[float, ...]          # 0 = t_0 < ... < t_k
    norms_e: tuple[float, ...]        # ||psi*|_E|| per gap
    conorms_f: tuple[float, ...]      # m(psi*|_F) per gap
    contraction_margins: tuple[float, ...]
    expansion_margins: tuple[float, ...]
    ratio_margins: tuple[float, ...]
    eta: float
    T: float

    def __post_init__(self):
        k = len(self.times) - 1
        if k < 1 or len(self.norms_e) != k or len(self.conorms_f) != k:
            raise ConfigurationError("certificate partition and gap data disagree")
        worst = min(min(self.contraction_margins), min(self.expansion_margins),
                    min(self.ratio_margins))
        if worst < -MARGIN_TOL:
            raise ConfigurationError("certificate stored with violated margins")

    @property
    def length(self) -> int:
        return len(self.times) - 1

    @property
    def duration(self) -> float:
        return self.times[-1] - self.times[0]

    def to_json_dict(self):
        return {"schema_version": sp.SCHEMA_VERSION,
                "start_index": self.start_index,
                "times": list(self.times),
                "norms_e": list(self.norms_e),
                "conorms_f": list(self.conorms_f),
                "contraction_margins": list(self.contraction_margins),
                "expansion_margins": list(self.expansion_margins),
                "ratio_margins": list(self.ratio_margins),
                "eta": self.eta, "T": self.T}


@dataclass(frozen=True)
class ReturnCandidate:
    """Near-return pair (i, j), i < j, with absolute and relative gaps."""

    i: int
    j: int
    gap: float
    rel_gap: float

    def __post_init__(self):
        if not self.i < self.j:
            raise ConfigurationError("return candidate needs i < j")

    def to_json_dict(self):
        return {"schema_version": sp.SCHEMA_VERSION, "i": self.i, "j": self.j,
                "gap": self.gap, "rel_gap": self.rel_gap}


def _blocks_per_gap(c: sp.CocycleSequence, T: float) -> int:
    r = T / c.T
    r_int = int(round(r))
    if r_int < 1 or abs(r - r_int) > 1e-9:
        raise ConfigurationError(
            f"partition gap T={T} must be an integer multiple of block time {c.T}")
    return r_int


def _gap_norms(c: sp.CocycleSequence, split: sp.SplittingEstimate, pair,
               start: int, r: int):
    """(||prod|_E||, m(prod|_F)) for the r-block gap beginning at sample
    `start`."""
    e_blocks, f_blocks = pair
    p = sp._partial_product(c.blocks, start, start + r)
    be = split.stacked(start, e_blocks)
    bf = split.stacked(start, f_blocks)
    return sp.restriction_norm(p, be), sp.restriction_conorm(p, bf)


def pesin_block_test(c: sp.CocycleSequence, split: sp.SplittingEstimate,
                     p: PesinBlockParams, start_index: int, pair,
                     sing_distances=None) -> dict:
    """Membership test at one sample: for every n within the window,
    prod of stable norms <= C e^{-n eta} and prod of unstable co-norms
    >= C^{-1} e^{n eta}, plus singularity clearance if distances are given.

    `pair` = (stable block indices, unstable block indices) into the
    splitting.  Returns membership plus the worst log-slack of each family.
    """
    r = _blocks_per_gap(c, p.T)
    n_max = (c.n - start_index) // r
    if n_max < 1:
        raise InsufficientDataError("window shorter than one block")
    log_c = math.log(p.C)
    sum_s = 0.0
    sum_u = 0.0
    worst_s = math.inf
    worst_u = math.inf
    for n in range(1, n_max + 1):
        ne, mf = _gap_norms(c, split, pair, start_index + (n - 1) * r, r)
        if ne <= 0 or mf <= 0:
            return {"member": False, "worst_stable_margin": -math.inf,
                    "worst_unstable_margin": -math.inf,
                    "clearance_margin": math.inf, "checked_horizon": n}
        sum_s += math.log(ne)
        sum_u += math.log(mf)
        worst_s = min(worst_s, (log_c - n * p.eta) - sum_s)
        worst_u = min(worst_u, sum_u - (n * p.eta - log_c))
    clearance_margin = math.inf
    if sing_distances is not None:
        clearance_margin = float(np.min(
            np.asarray(sing_distances)[start_index:start_index + n_max * r + 1])) \
            - p.clearance
    member = (worst_s >= -MARGIN_TOL and worst_u >= -MARGIN_TOL
              and clearance_margin >= -MARGIN_TOL)
    return {"member": bool(member), "worst_stable_margin": worst_s,
            "worst_unstable_margin": worst_u,
            "clearance_margin": clearance_margin, "checked_horizon": n_max}


def _string_margins(norms_e, conorms_f, eta, T):
    """The three margin families of the quasi-hyperbolic definition, as
    log-slacks (>= 0 iff satisfied)."""
    k = len(norms_e)
    log_e = np.log(norms_e)
    log_f = np.log(conorms_f)
    pre = np.cumsum(log_e)
    contraction = [-eta * (n + 1) * T - pre[n] for n in range(k)]
    suffix = np.cumsum(log_f[::-1])[::-1]
    expansion = [suffix[n] - eta * (k - n) * T for n in range(k)]
    ratio = [-eta * T - (log_e[n] - log_f[n]) for n in range(k)]
    return contraction, expansion, ratio


def quasi_hyperbolic_scan(c: sp.CocycleSequence, split: sp.SplittingEstimate,
                          eta: float, T: float, pair) -> list[StringCertificate]:
    """Greedy scan for maximal quasi-hyperbolic strings with uniform partition
    gaps T.

    From each admissible start the segment grows while the prefix contraction
    and per-gap ratio conditions hold; the tail expansion condition is then
    enforced retrospectively by trimming the end.  Emitted certificates are
    non-overlapping and every one passes verify_certificate."""
    if eta <= 0 or T <= 0:
        raise ConfigurationError("eta and T must be positive")
    r = _blocks_per_gap(c, T)
    n_gaps = c.n // r
    # per-gap restricted norms, computed once
    ne = np.empty(n_gaps)
    mf = np.empty(n_gaps)
    for g in range(n_gaps):
        ne[g], mf[g] = _gap_norms(c, split, pair, g * r, r)
    certs = []
    g = 0
    while g < n_gaps:
        if ne[g] <= 0 or mf[g] <= 0 \
                or math.log(ne[g]) - math.log(mf[g]) > -eta * T + MARGIN_TOL:
            g += 1
            continue
        # grow under prefix-contraction + per-gap-ratio
        prefix = 0.0
        end = g
        while end < n_gaps:
            if ne[end] <= 0 or mf[end] <= 0:
                break
            le, lf = math.log(ne[end]), math.log(mf[end])
            if le - lf > -eta * T + MARGIN_TOL \
                    or prefix + le > -eta * (end - g + 1) * T + MARGIN_TOL:
                break
            prefix += le
            end += 1
        # trim the end until every suffix of co-norms expands
        k = end - g
        while k > 0:
            lf = np.log(mf[g:g + k])
            suffix = np.cumsum(lf[::-1])[::-1]
            bad = suffix - eta * T * np.arange(k, 0, -1) < -MARGIN_TOL
            if not np.any(bad):
                break
            k = int(np.argmax(bad))  # keep gaps before the first violation
        if k >= 1:
            gaps_e = tuple(float(x) for x in ne[g:g + k])
            gaps_f = tuple(float(x) for x in mf[g:g + k])
            con, exp, rat = _string_margins(gaps_e, gaps_f, eta, T)
            certs.append(StringCertificate(
                start_index=g * r,
                times=tuple(float(n * T) for n in range(k + 1)),
                norms_e=gaps_e, conorms_f=gaps_f,
                contraction_margins=tuple(map(float, con)),
                expansion_margins=tuple(map(float, exp)),
                ratio_margins=tuple(map(float, rat)),
                eta=eta, T=T))
            g += k
        else:
            g += 1
    return certs


def verify_certificate(c: sp.CocycleSequence, split: sp.SplittingEstimate,
                       cert: StringCertificate, pair) -> bool:
    """Independent brute-force recomputation of all three inequality families
    of a certificate from the raw blocks."""
    r = _blocks_per_gap(c, cert.T)
    k = cert.length
    start = cert.start_index
    if start % r != 0 or start + k * r > c.n:
        return False
    norms_e = []
    conorms_f = []
    for n in range(k):
        ne, mf = _gap_norms(c, split, pair, start + n * r, r)
        norms_e.append(ne)
        conorms_f.append(mf)
    if any(x <= 0 for x in norms_e + conorms_f):
        return False
    # stored gap data must match the recomputation
    if not (np.allclose(norms_e, cert.norms_e, rtol=1e-10)
            and np.allclose(conorms_f, cert.conorms_f, rtol=1e-10)):
        return False
    con, exp, rat = _string_margins(norms_e, conorms_f, cert.eta, cert.T)
    return min(min(con), min(exp), min(rat)) >= -MARGIN_TOL


def near_return_detect(states, field_norms, block_members, D_rel: float,
                       min_separation: int = MIN_RETURN_SEPARATION,
                       dedupe_window: int = 0) -> list[ReturnCandidate]:
    """Near-return pairs among block-member samples: relative gap
    d(x_i, x_j)/|X(x_i)| <= D_rel with j - i >= min_separation.

    Uses a spatial grid hash at cell size D_rel * median |X| so only
    neighboring cells are compared.  Results sorted by relative gap
    ascending, ties by (i, j).  A positive `dedupe_window` keeps only the
    best pair within each window-sized neighborhood of index pairs, so a
    dense trajectory does not report the same return thousands of times."""
    if D_rel <= 0:
        raise ConfigurationError("D_rel must be positive")
    states = np.asarray(states, dtype=float)
    field_norms = np.asarray(field_norms, dtype=float)
    members = sorted(set(int(i) for i in block_members))
    if not members:
        return []
    cell = D_rel * float(np.median(field_norms[members]))
    if cell <= 0:
        return []
    d = states.shape[1]
    grid: dict[tuple, list[int]] = {}
    for i in members:
        key = tuple((states[i] // cell).astype(int))
        grid.setdefault(key, []).append(i)
    # each unordered neighbor-cell pair is visited once; the self pair uses
    # the upper triangle, so no duplicate (i, j) can arise
    half_offsets = [tuple(o - 1 for o in off) for off in np.ndindex(*([3] * d))
                    if tuple(o - 1 for o in off) > tuple([0] * d)]
    chunks_i = []
    chunks_j = []

    def _emit(ii, jj):
        lo = np.minimum(ii, jj)
        hi = np.maximum(ii, jj)
        keep = hi - lo >= min_separation
        if np.any(keep):
            chunks_i.append(lo[keep])
            chunks_j.append(hi[keep])

    for key, bucket in grid.items():
        a = np.asarray(bucket)
        pa = states[a]
        diff = np.linalg.norm(pa[:, None, :] - pa[None, :, :], axis=2)
        ii, jj = np.where(np.triu(diff <= cell, k=1))
        _emit(a[ii], a[jj])
        for off in half_offsets:
            other = grid.get(tuple(k + o for k, o in zip(key, off)))
            if other is None:
                continue
            b = np.asarray(other)
            diff = np.linalg.norm(pa[:, None, :] - states[b][None, :, :], axis=2)
            ii, jj = np.where(diff <= cell)
            _emit(a[ii], b[jj])
    if not chunks_i:
        return []
    ii = np.concatenate(chunks_i)
    jj = np.concatenate(chunks_j)
    gaps = np.linalg.norm(states[ii] - states[jj], axis=1)
    rels = gaps / field_norms[ii]
    keep = rels <= D_rel
    ii, jj, gaps, rels = ii[keep], jj[keep], gaps[keep], rels[keep]
    order = np.lexsort((jj, ii, rels))
    ii, jj, gaps, rels = ii[order], jj[order], gaps[order], rels[order]
    if dedupe_window > 0:
        w = dedupe_window
        # best entry per coarse (i, j) tile first (vectorized), then greedy
        # exclusion of neighboring tiles in ascending-gap order
        tiles = (ii // w).astype(np.int64) * (2 ** 31) + (jj // w)
        _, first = np.unique(tiles, return_index=True)
        first = np.sort(first)  # ascending rel order preserved
        taken: set[tuple[int, int]] = set()
        sel = []
        for idx in first:
            key = (int(ii[idx]) // w, int(jj[idx]) // w)
            if any((key[0] + a, key[1] + b) in taken
                   for a in (-1, 0, 1) for b in (-1, 0, 1)):
                continue
            taken.add(key)
            sel.append(int(idx))
        sel.sort(key=lambda idx: (rels[idx], ii[idx], jj[idx]))
        ii, jj, gaps, rels = ii[sel], jj[sel], gaps[sel], rels[sel]
    return [ReturnCandidate(i=int(a), j=int(b), gap=float(g), rel_gap=float(r))
            for a, b, g, r in zip(ii, jj, gaps, rels)]


def verify_candidate(states, field_norms, cand: ReturnCandidate, D_rel: float,
                     min_separation: int = MIN_RETURN_SEPARATION) -> bool:
    """Independent re-check of one near-return pair."""
    states = np.asarray(states, dtype=float)
    gap = float(np.linalg.norm(states[cand.i] - states[cand.j]))
    rel = gap / float(field_norms[cand.i])
    return (abs(gap - cand.gap) <= 1e-12 * max(1.0, gap)
            and abs(rel - cand.rel_gap) <= 1e-12 * max(1.0, rel)
            and rel <= D_rel
            and cand.j - cand.i >= min_separation)

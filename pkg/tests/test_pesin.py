"""Block membership tests, quasi-hyperbolic string scanning, and near-return
detection."""

import math

import numpy as np
import pytest

import lpflow.pesin as ps
import lpflow.spectra as sp
from lpflow.errors import ConfigurationError, InsufficientDataError


def _axes_split(n, dims):
    m = sum(dims)
    eye = np.eye(m)
    blocks = []
    start = 0
    for d in dims:
        blocks.append(eye[:, start:start + d])
        start += d
    bases = tuple(tuple(b.copy() for b in blocks) for _ in range(n + 1))
    return sp.SplittingEstimate(bases=bases, dimensions=tuple(dims),
                                equivariance_residual=0.0)


def _hyperbolic(n, T=0.5, rate=2.0):
    """Constant diag(e^{-rate T}, e^{rate T}) cocycle with axes splitting."""
    A = np.diag([math.exp(-rate * T), math.exp(rate * T)])
    c = sp.constant_cocycle(A, n, T=T)
    return c, _axes_split(n, (1, 1))


PAIR = ([0], [1])


def test_block_params_validation():
    with pytest.raises(ConfigurationError):
        ps.PesinBlockParams(T=0.5, eta=0.0, C=1.0)
    with pytest.raises(ConfigurationError):
        ps.PesinBlockParams(T=0.5, eta=1.0, C=0.5)
    p = ps.PesinBlockParams(T=0.5, eta=1.0, C=4.0)
    assert p.clearance == 0.25


def test_block_membership_at_exact_boundary():
    # blocks contract/expand at exactly e^{+-2T}: member for eta = 2, not 3
    c, split = _hyperbolic(40, T=0.5, rate=2.0)
    p = ps.PesinBlockParams(T=0.5, eta=2.0 * 0.5, C=1.0)
    res = ps.pesin_block_test(c, split, p, 0, PAIR)
    assert res["member"]
    assert res["worst_stable_margin"] >= -ps.MARGIN_TOL
    tighter = ps.PesinBlockParams(T=0.5, eta=3.0 * 0.5, C=1.0)
    assert not ps.pesin_block_test(c, split, tighter, 0, PAIR)["member"]


def test_block_membership_monotone_in_constants():
    # raising C can only admit more points; raising eta can only reject
    c, split = _hyperbolic(40, T=0.5, rate=2.0)
    base = ps.PesinBlockParams(T=0.5, eta=0.8, C=1.0)
    looser = ps.PesinBlockParams(T=0.5, eta=0.6, C=10.0)
    assert ps.pesin_block_test(c, split, base, 0, PAIR)["member"]
    assert ps.pesin_block_test(c, split, looser, 0, PAIR)["member"]


def test_block_clearance():
    c, split = _hyperbolic(10, T=0.5, rate=2.0)
    p = ps.PesinBlockParams(T=0.5, eta=0.5, C=2.0)
    near = np.full(c.n + 1, 0.4)      # below clearance 0.5
    res = ps.pesin_block_test(c, split, p, 0, PAIR, sing_distances=near)
    assert not res["member"]
    assert res["clearance_margin"] < 0
    far = np.full(c.n + 1, 2.0)
    assert ps.pesin_block_test(c, split, p, 0, PAIR, sing_distances=far)["member"]


def test_block_insufficient_data():
    c, split = _hyperbolic(3, T=0.5)
    p = ps.PesinBlockParams(T=1.5, eta=0.5, C=1.0)
    with pytest.raises(InsufficientDataError):
        ps.pesin_block_test(c, split, p, 1, PAIR)


def test_scan_full_window_on_uniform_hyperbolic():
    c, split = _hyperbolic(60, T=0.5, rate=2.0)
    certs = ps.quasi_hyperbolic_scan(c, split, eta=1.0, T=0.5, pair=PAIR)
    assert len(certs) == 1
    cert = certs[0]
    assert cert.start_index == 0
    assert cert.length == 60
    assert cert.duration == pytest.approx(30.0)
    assert min(cert.ratio_margins) >= -ps.MARGIN_TOL


def test_scan_empty_on_identity():
    c = sp.constant_cocycle(np.eye(2), 40, T=0.5)
    split = _axes_split(40, (1, 1))
    assert ps.quasi_hyperbolic_scan(c, split, eta=0.5, T=0.5, pair=PAIR) == []


def test_scan_skips_bad_stretch():
    # hyperbolic blocks with a neutral stretch in the middle: two certificates
    T = 0.5
    good = np.diag([math.exp(-1.0), math.exp(1.0)])
    blocks = [good] * 20 + [np.eye(2)] * 4 + [good] * 20
    c = sp.CocycleSequence(T=T, blocks=np.array(blocks))
    split = _axes_split(len(blocks), (1, 1))
    certs = ps.quasi_hyperbolic_scan(c, split, eta=1.0, T=T, pair=PAIR)
    assert len(certs) == 2
    assert certs[0].start_index == 0 and certs[0].length == 20
    assert certs[1].start_index == 24 and certs[1].length == 20
    for cert in certs:
        assert ps.verify_certificate(c, split, cert, PAIR)


def test_scan_gap_multiple_blocks():
    c, split = _hyperbolic(40, T=0.25, rate=2.0)
    certs = ps.quasi_hyperbolic_scan(c, split, eta=1.0, T=0.5, pair=PAIR)
    assert len(certs) == 1 and certs[0].length == 20
    with pytest.raises(ConfigurationError):
        ps.quasi_hyperbolic_scan(c, split, eta=1.0, T=0.3, pair=PAIR)


def test_certificate_rejects_violated_margins():
    with pytest.raises(ConfigurationError):
        ps.StringCertificate(
            start_index=0, times=(0.0, 0.5), norms_e=(2.0,), conorms_f=(0.5,),
            contraction_margins=(-1.0,), expansion_margins=(-1.0,),
            ratio_margins=(-2.0,), eta=1.0, T=0.5)


def test_verify_certificate_detects_tampering():
    c, split = _hyperbolic(20, T=0.5, rate=2.0)
    cert = ps.quasi_hyperbolic_scan(c, split, eta=1.0, T=0.5, pair=PAIR)[0]
    assert ps.verify_certificate(c, split, cert, PAIR)
    forged = ps.StringCertificate(
        start_index=cert.start_index, times=cert.times,
        norms_e=tuple(x * 0.5 for x in cert.norms_e),
        conorms_f=cert.conorms_f,
        contraction_margins=cert.contraction_margins,
        expansion_margins=cert.expansion_margins,
        ratio_margins=cert.ratio_margins, eta=cert.eta, T=cert.T)
    assert not ps.verify_certificate(c, split, forged, PAIR)
    shifted = ps.StringCertificate(
        start_index=cert.start_index + 1, times=cert.times,
        norms_e=cert.norms_e, conorms_f=cert.conorms_f,
        contraction_margins=cert.contraction_margins,
        expansion_margins=cert.expansion_margins,
        ratio_margins=cert.ratio_margins, eta=cert.eta, T=cert.T)
    assert not ps.verify_certificate(c, split, shifted, PAIR)


def test_near_return_on_periodic_samples():
    # samples on a circle revisit themselves after one revolution
    n_per = 20
    th = np.linspace(0.0, 4 * np.pi, 2 * n_per, endpoint=False)
    states = np.column_stack([np.cos(th), np.sin(th)])
    norms = np.ones(len(th))
    cands = ps.near_return_detect(states, norms, range(len(th)), D_rel=0.05,
                                  min_separation=n_per // 2)
    assert cands
    assert all(c.j - c.i == n_per for c in cands)
    assert all(c.rel_gap <= 0.05 for c in cands)
    rels = [c.rel_gap for c in cands]
    assert rels == sorted(rels)
    for c in cands:
        assert ps.verify_candidate(states, norms, c, 0.05,
                                   min_separation=n_per // 2)


def test_near_return_none_on_escaping_samples():
    states = np.column_stack([np.arange(50.0), np.zeros(50)])
    norms = np.ones(50)
    assert ps.near_return_detect(states, norms, range(50), D_rel=0.1) == []


def test_near_return_respects_min_separation():
    states = np.zeros((10, 2))
    norms = np.ones(10)
    cands = ps.near_return_detect(states, norms, range(10), D_rel=0.5,
                                  min_separation=8)
    assert cands and all(c.j - c.i >= 8 for c in cands)


def test_near_return_dedupe_window():
    n_per = 100
    th = np.linspace(0.0, 4 * np.pi, 2 * n_per, endpoint=False)
    states = np.column_stack([np.cos(th), np.sin(th)])
    norms = np.ones(len(th))
    dense = ps.near_return_detect(states, norms, range(len(th)), D_rel=0.2,
                                  min_separation=n_per // 2)
    sparse = ps.near_return_detect(states, norms, range(len(th)), D_rel=0.2,
                                   min_separation=n_per // 2,
                                   dedupe_window=n_per // 4)
    assert len(sparse) < len(dense)
    assert sparse[0].rel_gap == dense[0].rel_gap


def test_near_return_only_members_considered():
    states = np.zeros((10, 2))
    norms = np.ones(10)
    cands = ps.near_return_detect(states, norms, [0, 9], D_rel=0.5,
                                  min_separation=3)
    assert [(c.i, c.j) for c in cands] == [(0, 9)]


def test_verify_candidate_rejects_mismatch():
    states = np.zeros((10, 2))
    states[9] = [0.01, 0.0]
    norms = np.ones(10)
    good = ps.ReturnCandidate(i=0, j=9, gap=0.01, rel_gap=0.01)
    assert ps.verify_candidate(states, norms, good, 0.05)
    bad = ps.ReturnCandidate(i=0, j=9, gap=0.5, rel_gap=0.5)
    assert not ps.verify_candidate(states, norms, bad, 0.05)
    too_close = ps.ReturnCandidate(i=0, j=1, gap=0.0, rel_gap=0.0)
    assert not ps.verify_candidate(states, norms, too_close, 0.05,
                                   min_separation=5)


def test_scan_agrees_with_direct_block_test_on_lorenz():
    import lpflow.field as vf
    import lpflow.flow as fl
    spec = vf.lorenz()
    x0 = fl.flow_map(spec, np.array([1.0, 1.0, 1.0]), 30.0)
    c = sp.build_cocycle(spec, x0, 0.5, 60)
    spectrum = sp.benettin_spectrum(c)
    split = sp.oseledec_filtration(c, spectrum=spectrum)
    neg = [i for i, lam in enumerate(spectrum.distinct) if lam < 0]
    pos = [i for i in range(len(spectrum.distinct)) if i not in neg]
    certs = ps.quasi_hyperbolic_scan(c, split, eta=0.3, T=0.5,
                                     pair=(neg, pos))
    assert certs
    for cert in certs:
        assert ps.verify_certificate(c, split, cert, (neg, pos))
    # every certificate start passes the pointwise block test at matching
    # constants
    p = ps.PesinBlockParams(T=0.5, eta=0.3 * 0.5, C=1.0)
    covered = sum(c_.length for c_ in certs)
    assert covered >= 30

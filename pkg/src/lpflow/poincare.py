"""Normal bundle machinery: orthonormal normal frames, the linear Poincare
flow and its scaled variant, the extended two-component flow, and sectional
Poincare maps with return-time contracts.

Frames along an orbit are produced by a parallel-transport surrogate: project
the previous frame onto the new normal space and re-orthonormalize.  Any
smoothly varying orthonormal frame yields the same cocycle spectrum; this
choice minimizes spurious rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field as vf
from . import flow as fl
from .errors import (ConfigurationError, DegenerateInputError, NoCrossingError,
                     SingularityError)

# Relative radius of sections: radius = SECTION_BETA * |X(anchor)|.
SECTION_BETA = 0.05
# |X| < SINGULARITY_REL_TOL * K0 aborts Poincare-flow operations.
SINGULARITY_REL_TOL = 1e-8
CROSSING_TOL = 1e-10


@dataclass(frozen=True)
class NormalFrame:
    """Base point x, field value X(x), and an orthonormal basis of the normal
    space N_x = {v : v perp X(x)} stored as columns of `basis` (d x (d-1))."""

    x: np.ndarray
    field_value: np.ndarray
    basis: np.ndarray

    @property
    def field_norm(self) -> float:
        return float(np.linalg.norm(self.field_value))


@dataclass(frozen=True)
class SectionSpec:
    """Local cross section: disc of radius r in the normal space at `anchor`."""

    anchor: np.ndarray
    radius: float
    frame: NormalFrame


def normal_projection(x, X_x, v) -> np.ndarray:
    """Orthogonal projection of v onto the normal space at x:
    v - (<v, X>/|X|^2) X.  Idempotent; undefined at singularities."""
    X_x = np.asarray(X_x, dtype=float)
    v = np.asarray(v, dtype=float)
    n2 = float(X_x @ X_x)
    if n2 == 0.0:
        raise SingularityError("normal projection undefined where X = 0")
    return v - (v @ X_x) / n2 * X_x


def frame_at(spec, x) -> NormalFrame:
    """Deterministic initial frame at a regular point: the Householder
    reflection mapping e1 to X/|X| carries e2..ed to an orthonormal basis of
    the normal space."""
    x = np.asarray(x, dtype=float)
    Xx = vf.eval_field(spec, x)
    nx = np.linalg.norm(Xx)
    if nx == 0.0:
        raise SingularityError(f"frame undefined at singularity {x}")
    d = spec.dimension
    u = Xx / nx
    e1 = np.zeros(d)
    e1[0] = 1.0
    w = u - e1 if u[0] > 0 else u + e1
    wn = np.linalg.norm(w)
    if wn < 1e-14:
        H = np.eye(d)
    else:
        w = w / wn
        H = np.eye(d) - 2.0 * np.outer(w, w)
    # columns of H are an orthonormal basis with first column = +-u
    basis = H[:, 1:]
    return NormalFrame(x=x, field_value=Xx, basis=basis)


def transport_frame(spec, frame: NormalFrame, x_new) -> NormalFrame:
    """Transport a frame to a nearby point: project the old basis onto the new
    normal space and re-orthonormalize (Gram-Schmidt via QR, signs fixed for
    continuity)."""
    x_new = np.asarray(x_new, dtype=float)
    X_new = vf.eval_field(spec, x_new)
    n_new = np.linalg.norm(X_new)
    if n_new == 0.0:
        raise SingularityError(f"cannot transport frame to singularity {x_new}")
    proj = np.array([normal_projection(x_new, X_new, col) for col in frame.basis.T]).T
    q, r = np.linalg.qr(proj)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return NormalFrame(x=x_new, field_value=X_new, basis=q * signs)


def check_regular(spec, x, k0: float | None = None):
    """Raise SingularityError if |X(x)| is below the relative threshold."""
    nx = float(np.linalg.norm(vf.eval_field(spec, x)))
    thresh = SINGULARITY_REL_TOL * (k0 if k0 is not None else 1.0)
    if nx < thresh or nx == 0.0:
        raise SingularityError(f"|X| = {nx:.3g} below threshold near {x}")
    return nx


def linear_poincare(spec, x, t, frames, cfg=fl.DEFAULT_CONFIG) -> np.ndarray:
    """Linear Poincare flow psi_t expressed in the given (in, out) frames:
    P[j, i] = <n_j_out, proj(Phi_t n_i_in)>.  Because the out-frame columns
    are orthogonal to X(phi_t x), the projection is implicit in the inner
    product."""
    frame_in, frame_out = frames
    _, M = fl.flow_and_tangent(spec, x, t, cfg)
    if frame_out.field_norm == 0.0 or frame_in.field_norm == 0.0:
        raise SingularityError("linear Poincare flow undefined at singularities")
    return frame_out.basis.T @ (M @ frame_in.basis)


def scaled_linear_poincare(spec, x, t, frames, cfg=fl.DEFAULT_CONFIG) -> np.ndarray:
    """psi*_t = (|X(x)| / |X(phi_t x)|) psi_t."""
    frame_in, frame_out = frames
    scale = frame_in.field_norm / frame_out.field_norm
    return scale * linear_poincare(spec, x, t, frames, cfg)


def extended_lpf(spec, x, t, v1, v2, cfg=fl.DEFAULT_CONFIG):
    """Two-component extended flow on (unit direction, orthogonal vector):
    first component Phi_t v1, second component Phi_t v2 minus its projection
    onto Phi_t v1.  The outputs stay orthogonal by construction."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if abs(np.linalg.norm(v1) - 1.0) > 1e-8:
        raise DegenerateInputError("first component must be a unit vector")
    if abs(v1 @ v2) > 1e-8 * max(1.0, np.linalg.norm(v2)):
        raise DegenerateInputError("components must be orthogonal")
    _, M = fl.flow_and_tangent(spec, x, t, cfg)
    w1 = M @ v1
    n1sq = float(w1 @ w1)
    if n1sq < 1e-28:
        raise DegenerateInputError("first component collapsed under the tangent flow")
    w2 = M @ v2 - ((M @ v2) @ w1) / n1sq * w1
    return w1, w2


def section_at(spec, anchor, beta: float = SECTION_BETA) -> SectionSpec:
    frame = frame_at(spec, anchor)
    return SectionSpec(anchor=np.asarray(anchor, dtype=float),
                       radius=beta * frame.field_norm, frame=frame)


def _crossing_function(spec, y, section, cfg):
    """Signed section coordinate g(t) = <phi_t(y) - anchor, X(anchor)> sampled
    through a dense trajectory over (0, 2 * t_max]."""
    Xa = section.frame.field_value
    anchor = section.anchor

    def g_of_state(state):
        return float((state - anchor) @ Xa)
    return g_of_state


def section_crossing(spec, section: SectionSpec, y, cfg=fl.DEFAULT_CONFIG,
                     t_window=(0.0, 2.0)):
    """First crossing time t in t_window with phi_t(y) on the section plane,
    found by bracketing on a dense sample then bisection refinement to 1e-10.

    Returns (t, crossing_point, ambiguous) where ambiguous flags multiple
    crossings inside the window."""
    t_lo, t_hi = t_window
    y = np.asarray(y, dtype=float)
    traj = fl.integrate_flow(spec, y, [0.0, t_hi],
                             cfg=fl.IntegratorConfig(method=cfg.method,
                                                     h=min(cfg.h, (t_hi - t_lo) / 400),
                                                     atol=cfg.atol, rtol=cfg.rtol,
                                                     box=cfg.box,
                                                     max_steps=cfg.max_steps))
    g_state = _crossing_function(spec, y, section, cfg)
    ts = traj.ts
    gs = np.array([g_state(x) for x in traj.xs])
    mask = ts > t_lo + CROSSING_TOL
    sign_change = np.where(mask[1:] & (np.sign(gs[:-1]) * np.sign(gs[1:]) < 0))[0]
    exact = np.where(mask & (np.abs(gs) < 1e-14))[0]
    if len(sign_change) == 0 and len(exact) == 0:
        raise NoCrossingError(f"no section crossing in ({t_lo}, {t_hi})")
    ambiguous = (len(sign_change) + len(exact)) > 1
    if len(exact) and (len(sign_change) == 0 or exact[0] <= sign_change[0]):
        t_star = float(ts[exact[0]])
        return t_star, traj.interpolate(t_star), ambiguous
    i = sign_change[0]
    a, b = float(ts[i]), float(ts[i + 1])
    ga, gb = gs[i], gs[i + 1]
    while b - a > CROSSING_TOL:
        m = 0.5 * (a + b)
        gm = g_state(traj.interpolate(m))
        if ga * gm <= 0:
            b, gb = m, gm
        else:
            a, ga = m, gm
    t_star = 0.5 * (a + b)
    point = traj.interpolate(t_star)
    offset = np.linalg.norm(point - section.anchor)
    if offset > 10.0 * section.radius:
        raise NoCrossingError(
            f"crossing at t={t_star:.6g} lands {offset:.3g} from anchor, "
            f"outside 10x section radius {section.radius:.3g}")
    return t_star, point, ambiguous


def sectional_poincare_map(spec, x, T, y_offset, cfg=fl.DEFAULT_CONFIG,
                           beta: float = SECTION_BETA) -> np.ndarray:
    """Nonlinear holonomy from the section at x to the section at phi_T(x),
    advancing through intermediate sections spaced at most one time unit
    apart.  Input and output offsets are coordinates in the respective
    frames."""
    x = np.asarray(x, dtype=float)
    frame0 = frame_at(spec, x)
    y_offset = np.asarray(y_offset, dtype=float)
    if np.linalg.norm(y_offset) > beta * frame0.field_norm + 1e-15:
        raise ConfigurationError("offset outside the relative section radius")
    n_steps = max(1, int(np.ceil(T)))
    step = T / n_steps
    base = x
    y = x + frame0.basis @ y_offset
    for _ in range(n_steps):
        base_next = fl.flow_map(spec, base, step, cfg)
        section = section_at(spec, base_next, beta=beta)
        _, y, _ = section_crossing(spec, section, y, cfg,
                                   t_window=(0.0, 2.0 * step))
        base = base_next
    frame_T = frame_at(spec, base)
    return frame_T.basis.T @ (y - frame_T.x)

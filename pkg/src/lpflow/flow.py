"""Numerical integration of the flow phi_t and the tangent flow (variational
equations), with dense interpolable output.

Backward time is always realized by integrating the reversed field -X forward;
there is a single forward integrator code path.  Leaving the working box is an
error, never a clamp.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from . import field as vf
from .errors import (ConfigurationError, DegenerateInputError, EscapeError,
                     NumericalError, StepBudgetError)


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"          # "rk45" (adaptive) or "rk4" (fixed step)
    h: float = 0.01               # base step / output sampling step
    atol: float = 1e-10
    rtol: float = 1e-9
    box: Optional[tuple] = None   # (lo, hi) arrays; None = spec default box
    max_steps: int = 20_000_000

    def __post_init__(self):
        if self.h <= 0 or self.atol <= 0 or self.rtol <= 0:
            raise ConfigurationError("step and tolerances must be positive")
        if self.method not in ("rk45", "rk4"):
            raise ConfigurationError(f"unknown integrator method {self.method!r}")

    def box_for(self, spec: vf.VectorFieldSpec):
        if self.box is None:
            return spec.default_box()
        return (np.asarray(self.box[0], dtype=float),
                np.asarray(self.box[1], dtype=float))


DEFAULT_CONFIG = IntegratorConfig()


class Trajectory:
    """Time-stamped samples of phi_t with a cubic-Hermite interpolation
    contract.  Immutable once returned by the integrator."""

    def __init__(self, ts, xs, field_norms, interpolant=None):
        self.ts = np.asarray(ts, dtype=float)
        self.xs = np.asarray(xs, dtype=float)
        self.field_norms = np.asarray(field_norms, dtype=float)
        self._interp = interpolant
        if self.ts.ndim != 1 or len(self.ts) != len(self.xs):
            raise ConfigurationError("trajectory times and states disagree")
        if len(self.ts) > 1 and np.any(np.diff(self.ts) <= 0):
            raise ConfigurationError("trajectory time stamps must be increasing")

    def __len__(self):
        return len(self.ts)

    @property
    def t0(self):
        return float(self.ts[0])

    @property
    def t1(self):
        return float(self.ts[-1])

    def interpolate(self, t):
        """State at time t (scalar or array), within [t0, t1]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.ts[0] - 1e-12) or np.any(t > self.ts[-1] + 1e-12):
            raise ConfigurationError("interpolation time outside trajectory span")
        if self._interp is None:
            if len(self.ts) == 1:
                return np.broadcast_to(self.xs[0], t.shape + self.xs[0].shape).copy()
            raise ConfigurationError("trajectory carries no interpolant")
        return self._interp(np.clip(t, self.ts[0], self.ts[-1]))

    def slice(self, t_a, t_b):
        """Sub-trajectory restricted to stored samples in [t_a, t_b]."""
        mask = (self.ts >= t_a - 1e-12) & (self.ts <= t_b + 1e-12)
        return Trajectory(self.ts[mask], self.xs[mask], self.field_norms[mask],
                          interpolant=self._interp)

    def to_csv(self, path):
        d = self.xs.shape[1]
        header = "t," + ",".join(f"x{i+1}" for i in range(d)) + ",field_norm"
        data = np.column_stack([self.ts, self.xs, self.field_norms])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def _fast_rhs(spec: vf.VectorFieldSpec) -> Callable:
    """Validation-free field closure for integrator inner loops."""
    if spec.family == "lorenz":
        sigma, rho, beta = spec.param("sigma"), spec.param("rho"), spec.param("beta")
        s = float(spec.orientation)

        def rhs(x):
            return s * np.array([sigma * (x[1] - x[0]),
                                 x[0] * (rho - x[2]) - x[1],
                                 x[0] * x[1] - beta * x[2]])
        return rhs
    if spec.family == "hopf_cylinder":
        s = float(spec.orientation)

        def rhs(x):
            r2 = x[0] * x[0] + x[1] * x[1]
            return s * np.array([x[0] - x[1] - x[0] * r2,
                                 x[0] + x[1] - x[1] * r2,
                                 -x[2]])
        return rhs
    return lambda x: vf.eval_field(spec, x)


def _fast_jac(spec: vf.VectorFieldSpec) -> Callable:
    if spec.family == "lorenz":
        sigma, rho, beta = spec.param("sigma"), spec.param("rho"), spec.param("beta")
        s = float(spec.orientation)

        def jac(x):
            return s * np.array([[-sigma, sigma, 0.0],
                                 [rho - x[2], -1.0, -x[0]],
                                 [x[1], x[0], -beta]])
        return jac
    return lambda x: vf.eval_jacobian(spec, x)


def _check_box(spec, cfg, ts, xs):
    lo, hi = cfg.box_for(spec)
    inside = np.all((xs >= lo - 1e-9) & (xs <= hi + 1e-9), axis=1)
    if not np.all(inside):
        bad = int(np.argmin(inside))
        last = max(bad - 1, 0)
        raise EscapeError(
            f"orbit left working box at t={ts[bad]:.6g}",
            last_state=np.array(xs[last]), last_time=float(ts[last]))


def _solve(spec, cfg, rhs_vec, y0, t_a, t_b):
    """Shared solve_ivp / fixed-RK4 driver on a vector RHS; returns (ts, ys)
    at the integrator's own steps plus the endpoint."""
    if cfg.method == "rk4":
        n = max(1, int(np.ceil((t_b - t_a) / cfg.h)))
        if n > cfg.max_steps:
            raise StepBudgetError(f"rk4 needs {n} steps > budget {cfg.max_steps}")
        h = (t_b - t_a) / n
        ts = [t_a]
        ys = [np.asarray(y0, dtype=float)]
        y = ys[0]
        t = t_a
        for _ in range(n):
            k1 = rhs_vec(t, y)
            k2 = rhs_vec(t + h / 2, y + h / 2 * k1)
            k3 = rhs_vec(t + h / 2, y + h / 2 * k2)
            k4 = rhs_vec(t + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            ts.append(t)
            ys.append(y)
        return np.array(ts), np.array(ys)
    sol = solve_ivp(rhs_vec, (t_a, t_b), y0, method="RK45",
                    rtol=cfg.rtol, atol=cfg.atol, dense_output=False)
    if not sol.success:
        y_last = sol.y[:, -1] if sol.y.size else np.asarray(y0)
        if not np.all(np.isfinite(y_last)):
            raise NumericalError(f"integration produced non-finite state: {sol.message}")
        raise EscapeError(f"integration failed: {sol.message}",
                          last_state=y_last[:spec.dimension],
                          last_time=float(sol.t[-1]) if sol.t.size else t_a)
    if sol.nfev > 6 * cfg.max_steps:
        raise StepBudgetError(f"step budget exceeded ({sol.nfev} evaluations)")
    return sol.t, sol.y.T


def integrate_flow(spec: vf.VectorFieldSpec, x0, t_span, cfg: IntegratorConfig = DEFAULT_CONFIG) -> Trajectory:
    """Integrate phi_t over t_span = [t_a, t_b] (t_a <= t_b) with samples on a
    uniform grid of step cfg.h plus the endpoint."""
    t_a, t_b = float(t_span[0]), float(t_span[1])
    if t_b < t_a:
        raise ConfigurationError("t_span must be ordered; use time_reverse for backward time")
    x0 = np.asarray(x0, dtype=float)
    rhs = _fast_rhs(spec)
    if t_b == t_a:
        norm = np.linalg.norm(rhs(x0))
        return Trajectory([t_a], [x0], [norm])
    raw_ts, raw_xs = _solve(spec, cfg, lambda t, y: rhs(y), x0, t_a, t_b)
    _check_box(spec, cfg, raw_ts, raw_xs)
    derivs = np.array([rhs(x) for x in raw_xs])
    # deduplicate repeated solver endpoints before building the spline
    keep = np.concatenate([[True], np.diff(raw_ts) > 1e-14])
    spline = CubicHermiteSpline(raw_ts[keep], raw_xs[keep], derivs[keep], axis=0)
    n_out = max(1, int(np.ceil((t_b - t_a) / cfg.h)))
    ts = np.linspace(t_a, t_b, n_out + 1)
    xs = spline(ts)
    norms = np.linalg.norm(np.array([rhs(x) for x in xs]), axis=1)
    return Trajectory(ts, xs, norms, interpolant=spline)


def flow_map(spec, x0, t, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """phi_t(x0) for t of either sign."""
    if t == 0:
        return np.asarray(x0, dtype=float).copy()
    work_spec = spec if t > 0 else vf.time_reverse(spec)
    rhs = _fast_rhs(work_spec)
    ts, ys = _solve(work_spec, cfg, lambda s, y: rhs(y), np.asarray(x0, dtype=float),
                    0.0, abs(t))
    _check_box(work_spec, cfg, ts, ys)
    return ys[-1]


def flow_and_tangent(spec, x0, t, cfg: IntegratorConfig = DEFAULT_CONFIG):
    """(phi_t(x0), Phi_t(x0)) by joint integration of state + variational
    matrix.  Negative t integrates -X forward, matching Phi_{-|t|}."""
    d = spec.dimension
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy(), np.eye(d)
    work_spec = spec if t > 0 else vf.time_reverse(spec)
    rhs = _fast_rhs(work_spec)
    jac = _fast_jac(work_spec)

    def aug(_, y):
        x = y[:d]
        m = y[d:].reshape(d, d)
        return np.concatenate([rhs(x), (jac(x) @ m).ravel()])

    y0 = np.concatenate([x0, np.eye(d).ravel()])
    ts, ys = _solve(work_spec, cfg, aug, y0, 0.0, abs(t))
    _check_box(work_spec, cfg, ts, ys[:, :d])
    return ys[-1, :d], ys[-1, d:].reshape(d, d)


def tangent_flow(spec, x0, t, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Tangent flow matrix Phi_t(x0)."""
    return flow_and_tangent(spec, x0, t, cfg)[1]


def time_reverse(spec):
    """Spec of -X (re-exported from the field module for pipeline symmetry)."""
    return vf.time_reverse(spec)


def unit_tangent(v) -> np.ndarray:
    """v / |v|; zero vectors are a degenerate input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise DegenerateInputError("cannot normalize zero or non-finite vector")
    return v / n

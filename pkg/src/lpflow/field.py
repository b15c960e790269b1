"""Vector field definitions: built-in families, polynomial fields, Jacobians,
and singularity geometry.

All fields live in a Euclidean working box in R^d with the flat metric.  A
spec is immutable after construction; every operation here is a pure function.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError

SINGULARITY_NORM_TOL = 1e-12

# Default working boxes (lo, hi) per family, chosen to contain the attractor
# or limit cycle of the standard parameter values with generous margin.
_DEFAULT_BOXES = {
    "lorenz": ([-30.0, -30.0, -5.0], [30.0, 30.0, 60.0]),
    "hopf_cylinder": ([-3.0, -3.0, -3.0], [3.0, 3.0, 3.0]),
    "rossler": ([-25.0, -25.0, -5.0], [25.0, 25.0, 40.0]),
}


@dataclass(frozen=True)
class PolyTerm:
    """One monomial term: contributes coeff * prod_i x_i**powers[i] to
    component `target` of the field."""

    target: int
    coeff: float
    powers: tuple[int, ...]


@dataclass(frozen=True)
class VectorFieldSpec:
    """Immutable description of a vector field X on R^d.

    `orientation` is +1 for X and -1 for the time-reversed field -X; the
    singularity list is shared by both.
    """

    dimension: int
    family: str
    params: tuple[tuple[str, float], ...] = ()
    terms: tuple[PolyTerm, ...] = ()
    singularities: tuple[tuple[float, ...], ...] = ()
    orientation: int = 1

    def __post_init__(self):
        if self.dimension < 2:
            raise ConfigurationError(f"dimension must be >= 2, got {self.dimension}")
        if self.orientation not in (1, -1):
            raise ConfigurationError("orientation must be +1 or -1")

    @property
    def param_map(self) -> dict[str, float]:
        return dict(self.params)

    def param(self, name: str) -> float:
        for key, value in self.params:
            if key == name:
                return value
        raise ConfigurationError(f"family {self.family!r} missing parameter {name!r}")

    def default_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = _DEFAULT_BOXES.get(self.family, ([-50.0] * self.dimension,
                                                  [50.0] * self.dimension))
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _lorenz_singularities(sigma: float, rho: float, beta: float):
    sings = [(0.0, 0.0, 0.0)]
    if rho > 1.0:
        r = math.sqrt(beta * (rho - 1.0))
        sings.append((r, r, rho - 1.0))
        sings.append((-r, -r, rho - 1.0))
    return tuple(sings)


def _rossler_singularities(a: float, b: float, c: float):
    disc = c * c - 4.0 * a * b
    if disc < 0.0 or a == 0.0:
        return ()
    sings = []
    for sgn in (1.0, -1.0):
        y = (-c + sgn * math.sqrt(disc)) / (2.0 * a)
        sings.append((-a * y, y, -y))
    return tuple(sings)


def lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> VectorFieldSpec:
    return VectorFieldSpec(
        dimension=3,
        family="lorenz",
        params=(("sigma", sigma), ("rho", rho), ("beta", beta)),
        singularities=_lorenz_singularities(sigma, rho, beta),
    )


def hopf_cylinder() -> VectorFieldSpec:
    """Planar Hopf normal form with an attached contracting z axis:
    xdot = x - y - x(x^2+y^2), ydot = x + y - y(x^2+y^2), zdot = -z.
    The unit circle {x^2+y^2=1, z=0} is a limit cycle of period 2*pi."""
    return VectorFieldSpec(
        dimension=3,
        family="hopf_cylinder",
        singularities=((0.0, 0.0, 0.0),),
    )


def rossler(a: float = 0.2, b: float = 0.2, c: float = 5.7) -> VectorFieldSpec:
    return VectorFieldSpec(
        dimension=3,
        family="rossler",
        params=(("a", a), ("b", b), ("c", c)),
        singularities=_rossler_singularities(a, b, c),
    )


def polynomial(dimension: int,
               terms: Sequence[PolyTerm | tuple],
               singularities: Sequence[Sequence[float]] = ()) -> VectorFieldSpec:
    norm_terms = []
    for t in terms:
        if not isinstance(t, PolyTerm):
            target, coeff, powers = t
            t = PolyTerm(int(target), float(coeff), tuple(int(p) for p in powers))
        if t.target < 0 or t.target >= dimension or len(t.powers) != dimension:
            raise ConfigurationError(f"malformed polynomial term {t}")
        norm_terms.append(t)
    return VectorFieldSpec(
        dimension=dimension,
        family="polynomial",
        terms=tuple(norm_terms),
        singularities=tuple(tuple(float(c) for c in s) for s in singularities),
    )


def linear(matrix) -> VectorFieldSpec:
    """Linear field X(x) = A x, expressed as a polynomial spec.  The origin is
    its only declared singularity."""
    a = np.asarray(matrix, dtype=float)
    d = a.shape[0]
    terms = []
    for i in range(d):
        for j in range(d):
            if a[i, j] != 0.0:
                powers = tuple(1 if k == j else 0 for k in range(d))
                terms.append(PolyTerm(i, float(a[i, j]), powers))
    return polynomial(d, terms, singularities=[tuple(0.0 for _ in range(d))])


def from_json(doc: Mapping) -> VectorFieldSpec:
    """Build a spec from the CLI JSON schema:
    {"family": "lorenz", "params": {...}} or
    {"family": "polynomial", "dimension": d, "terms": [...], "singularities": [...]}.
    """
    family = doc.get("family")
    params = doc.get("params", {})
    if family == "lorenz":
        return lorenz(**{k: float(v) for k, v in params.items()})
    if family == "hopf_cylinder":
        return hopf_cylinder()
    if family == "rossler":
        return rossler(**{k: float(v) for k, v in params.items()})
    if family == "linear":
        if "matrix" not in doc:
            raise ConfigurationError("linear spec needs 'matrix'")
        return linear(doc["matrix"])
    if family == "polynomial":
        if "dimension" not in doc or "terms" not in doc:
            raise ConfigurationError("polynomial spec needs 'dimension' and 'terms'")
        terms = [(t["target"], t["coeff"], t["powers"]) for t in doc["terms"]]
        return polynomial(int(doc["dimension"]), terms, doc.get("singularities", ()))
    raise ConfigurationError(f"unknown field family {family!r}")


def eval_field(spec: VectorFieldSpec, x) -> np.ndarray:
    """Evaluate X(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dimension,) or not np.all(np.isfinite(x)):
        raise ConfigurationError(f"bad state point {x!r} for dimension {spec.dimension}")
    if spec.family == "lorenz":
        sigma, rho, beta = spec.param("sigma"), spec.param("rho"), spec.param("beta")
        out = np.array([
            sigma * (x[1] - x[0]),
            x[0] * (rho - x[2]) - x[1],
            x[0] * x[1] - beta * x[2],
        ])
    elif spec.family == "hopf_cylinder":
        r2 = x[0] * x[0] + x[1] * x[1]
        out = np.array([
            x[0] - x[1] - x[0] * r2,
            x[0] + x[1] - x[1] * r2,
            -x[2],
        ])
    elif spec.family == "rossler":
        a, b, c = spec.param("a"), spec.param("b"), spec.param("c")
        out = np.array([
            -x[1] - x[2],
            x[0] + a * x[1],
            b + x[2] * (x[0] - c),
        ])
    elif spec.family == "polynomial":
        out = np.zeros(spec.dimension)
        for t in spec.terms:
            out[t.target] += t.coeff * np.prod(x ** np.asarray(t.powers))
    else:
        raise ConfigurationError(f"unknown field family {spec.family!r}")
    return spec.orientation * out


def eval_jacobian(spec: VectorFieldSpec, x) -> np.ndarray:
    """Analytic Jacobian DX(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dimension,) or not np.all(np.isfinite(x)):
        raise ConfigurationError(f"bad state point {x!r} for dimension {spec.dimension}")
    if spec.family == "lorenz":
        sigma, rho, beta = spec.param("sigma"), spec.param("rho"), spec.param("beta")
        jac = np.array([
            [-sigma, sigma, 0.0],
            [rho - x[2], -1.0, -x[0]],
            [x[1], x[0], -beta],
        ])
    elif spec.family == "hopf_cylinder":
        r2 = x[0] * x[0] + x[1] * x[1]
        jac = np.array([
            [1.0 - r2 - 2.0 * x[0] * x[0], -1.0 - 2.0 * x[0] * x[1], 0.0],
            [1.0 - 2.0 * x[0] * x[1], 1.0 - r2 - 2.0 * x[1] * x[1], 0.0],
            [0.0, 0.0, -1.0],
        ])
    elif spec.family == "rossler":
        a, c = spec.param("a"), spec.param("c")
        jac = np.array([
            [0.0, -1.0, -1.0],
            [1.0, a, 0.0],
            [x[2], 0.0, x[0] - c],
        ])
    elif spec.family == "polynomial":
        jac = np.zeros((spec.dimension, spec.dimension))
        for t in spec.terms:
            for j, p in enumerate(t.powers):
                if p == 0:
                    continue
                dpowers = np.asarray(t.powers, dtype=float)
                dpowers[j] -= 1
                jac[t.target, j] += t.coeff * p * np.prod(x ** dpowers)
    else:
        raise ConfigurationError(f"unknown field family {spec.family!r}")
    return spec.orientation * jac


def singularity_distance(spec: VectorFieldSpec, x) -> float:
    """Euclidean distance from x to the nearest declared singularity; +inf if
    the singularity list is empty."""
    x = np.asarray(x, dtype=float)
    if not spec.singularities:
        return math.inf
    sings = np.asarray(spec.singularities, dtype=float)
    return float(np.min(np.linalg.norm(sings - x, axis=1)))


def field_bound(spec: VectorFieldSpec, box=None, n_points: int = 10_000,
                seed: int = 0) -> float:
    """Estimate the working-box bound K0 = max(|X|, ||DX||) by Sobol sampling."""
    if box is None:
        lo, hi = spec.default_box()
    else:
        lo, hi = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    sampler = qmc.Sobol(d=spec.dimension, scramble=True, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two draw
        unit = sampler.random(n_points)
    pts = qmc.scale(unit, lo, hi)
    bound = 0.0
    for p in pts:
        bound = max(bound,
                    float(np.linalg.norm(eval_field(spec, p))),
                    float(np.linalg.norm(eval_jacobian(spec, p), ord=2)))
    return bound


def time_reverse(spec: VectorFieldSpec) -> VectorFieldSpec:
    """Spec of -X.  Involution; the singularity list is preserved."""
    return replace(spec, orientation=-spec.orientation)

"""Catalog of curvature operator paths along unit-speed geodesics.

A model supplies ``R(t) = R(gamma'(t), .) gamma'(t)`` restricted to the
normal space, with sectional curvatures as eigenvalues (negative for
hyperbolic directions), so that Jacobi tensors solve ``J'' + R J = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ModelError
from .symop import SymOp

CONSTANT = "Constant"
RANK_ONE = "RankOneSymmetric"
PRODUCT = "Product"
PERIODIC = "PeriodicCustom"
KINDS = (CONSTANT, RANK_ONE, PRODUCT, PERIODIC)


@dataclass(frozen=True)
class Factor:
    """Constant-curvature factor of a Riemannian product."""

    kappa: float
    n: int


@dataclass(frozen=True)
class FourierSeries:
    """``a0 + sum_k cos[k-1] cos(2 pi k t / P) + sin[k-1] sin(2 pi k t / P)``."""

    a0: float
    cos: tuple[float, ...] = ()
    sin: tuple[float, ...] = ()

    def __call__(self, t, period):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.a0))
        w = 2.0 * math.pi / period
        for k, a in enumerate(self.cos, start=1):
            out = out + a * np.cos(k * w * t)
        for k, b in enumerate(self.sin, start=1):
            out = out + b * np.sin(k * w * t)
        return out


@dataclass(frozen=True)
class CurvatureModel:
    """Curvature operator path along one geodesic.

    ``orientation = -1`` runs the geodesic backwards (used for the unstable
    side), and ``offset`` moves the base point along the orbit, so the
    model evaluates the underlying path at ``offset + orientation * t``.
    """

    kind: str
    n: int
    kappa: float = 0.0
    eigen_pairs: tuple[tuple[float, int], ...] = ()
    factors: tuple[Factor, ...] = ()
    c: float = 1.0
    period: float = 1.0
    coefficients: tuple[FourierSeries, ...] = ()
    orientation: int = 1
    offset: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.n < 2:
            raise ModelError("ambient dimension n must be at least 2")
        if self.orientation not in (1, -1):
            raise ModelError("orientation must be +1 or -1")
        if self.kind == RANK_ONE:
            if sum(m for _, m in self.eigen_pairs) != self.n - 1:
                raise ModelError("eigen_pairs multiplicities must sum to n-1")
            if any(m < 1 for _, m in self.eigen_pairs):
                raise ModelError("multiplicities must be positive")
        elif self.kind == PRODUCT:
            if len(self.factors) != 2:
                raise ModelError("Product needs exactly two factors")
            if not 0.0 <= self.c <= 1.0:
                raise ModelError("split c must lie in [0,1]")
            if sum(f.n for f in self.factors) != self.n:
                raise ModelError("factor dimensions must sum to n")
        elif self.kind == PERIODIC:
            if not self.period > 0:
                raise ModelError("period must be positive")
            if len(self.coefficients) != self.n - 1:
                raise ModelError("PeriodicCustom needs one coefficient series per normal direction")

    @property
    def dim(self) -> int:
        return self.n - 1

    @property
    def time_independent(self) -> bool:
        return self.kind != PERIODIC

    @property
    def s(self) -> float:
        """Norm of the second factor's velocity, ``sqrt(1 - c^2)``."""
        return math.sqrt(max(0.0, 1.0 - self.c * self.c))

    def reversed(self) -> "CurvatureModel":
        return replace(self, orientation=-self.orientation)

    def shifted(self, dt: float) -> "CurvatureModel":
        """The same geodesic seen from the base point reached after time ``dt``."""
        return replace(self, offset=self.offset + self.orientation * dt)

    def diagonal(self, t) -> np.ndarray:
        """Diagonal of ``R`` at times ``t`` (shape ``t.shape + (dim,)``)."""
        t = np.asarray(t, dtype=float)
        tau = self.offset + self.orientation * t
        if self.kind == PERIODIC:
            cols = [series(tau, self.period) for series in self.coefficients]
            out = np.stack(cols, axis=-1)
            if not np.all(np.isfinite(out)):
                raise ModelError("PeriodicCustom coefficients produced non-finite curvature")
            return out
        return np.broadcast_to(self._static_diagonal(), t.shape + (self.dim,)).copy()

    def _static_diagonal(self) -> np.ndarray:
        if self.kind == CONSTANT:
            return np.full(self.dim, float(self.kappa))
        if self.kind == RANK_ONE:
            return np.concatenate([np.full(m, float(k)) for k, m in self.eigen_pairs])
        f1, f2 = self.factors
        c2 = self.c * self.c
        s2 = 1.0 - c2
        # block order: factor 1 normal directions, factor 2 normal directions, mixed direction
        return np.concatenate(
            [np.full(f1.n - 1, f1.kappa * c2), np.full(f2.n - 1, f2.kappa * s2), [0.0]]
        )

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.kind == CONSTANT:
            d["kappa"] = self.kappa
        elif self.kind == RANK_ONE:
            d["eigen_pairs"] = [[k, m] for k, m in self.eigen_pairs]
        elif self.kind == PRODUCT:
            d["factors"] = [{"kind": CONSTANT, "kappa": f.kappa, "n": f.n} for f in self.factors]
            d["c"] = self.c
        else:
            d["period"] = self.period
            d["coefficients"] = [
                {"a0": s.a0, "cos": list(s.cos), "sin": list(s.sin)} for s in self.coefficients
            ]
        if self.orientation != 1:
            d["orientation"] = self.orientation
        if self.offset != 0.0:
            d["offset"] = self.offset
        return d


def curvature_at(model: CurvatureModel, t: float) -> SymOp:
    return SymOp(np.diag(model.diagonal(float(t))))


def curvature_batch(model: CurvatureModel, ts) -> np.ndarray:
    """``R`` at every time in ``ts`` as an array of shape ``(len(ts), dim, dim)``."""
    diag = model.diagonal(np.asarray(ts, dtype=float))
    out = np.zeros(diag.shape + (model.dim,))
    idx = np.arange(model.dim)
    out[..., idx, idx] = diag
    return out


# -- constructors ----------------------------------------------------------


def constant(kappa: float, n: int) -> CurvatureModel:
    return CurvatureModel(CONSTANT, n, kappa=float(kappa))


def flat(n: int) -> CurvatureModel:
    return constant(0.0, n)


def real_hyperbolic(n: int) -> CurvatureModel:
    return constant(-1.0, n)


def sphere(n: int) -> CurvatureModel:
    return constant(1.0, n)


def rank_one_symmetric(eigen_pairs) -> CurvatureModel:
    pairs = tuple((float(k), int(m)) for k, m in eigen_pairs)
    return CurvatureModel(RANK_ONE, 1 + sum(m for _, m in pairs), eigen_pairs=pairs)


def complex_hyperbolic(m: int) -> CurvatureModel:
    """Complex hyperbolic space of complex dimension ``m`` (holomorphic curvature -4)."""
    if m < 1:
        raise ModelError("complex dimension must be positive")
    pairs = [(-4.0, 1)] + ([(-1.0, 2 * m - 2)] if m > 1 else [])
    return rank_one_symmetric(pairs)


def product(f1: Factor, f2: Factor, c: float) -> CurvatureModel:
    for f in (f1, f2):
        if f.n < 1:
            raise ModelError("factor dimension must be at least 1")
    return CurvatureModel(PRODUCT, f1.n + f2.n, factors=(f1, f2), c=float(c))


def periodic(period: float, coefficients: Sequence[FourierSeries]) -> CurvatureModel:
    coefficients = tuple(coefficients)
    return CurvatureModel(PERIODIC, len(coefficients) + 1, period=float(period), coefficients=coefficients)


def from_dict(spec: dict) -> CurvatureModel:
    """Build a model from its JSON form; raises ``ModelError`` on bad input."""
    try:
        kind = spec["kind"]
        if kind == CONSTANT:
            model = constant(spec["kappa"], int(spec["n"]))
        elif kind == RANK_ONE:
            model = rank_one_symmetric(spec["eigen_pairs"])
            if "n" in spec and int(spec["n"]) != model.n:
                raise ModelError("eigen_pairs multiplicities must sum to n-1")
        elif kind == PRODUCT:
            f1, f2 = (Factor(float(f["kappa"]), int(f["n"])) for f in spec["factors"])
            model = product(f1, f2, spec["c"])
        elif kind == PERIODIC:
            series = [
                FourierSeries(float(s.get("a0", 0.0)), tuple(map(float, s.get("cos", ()))),
                              tuple(map(float, s.get("sin", ()))))
                for s in spec["coefficients"]
            ]
            model = periodic(spec["period"], series)
        else:
            raise ModelError(f"unknown model kind {kind!r}; expected one of {', '.join(KINDS)}")
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed model spec: {exc}") from exc
    orientation = int(spec.get("orientation", 1))
    offset = float(spec.get("offset", 0.0))
    return replace(model, orientation=orientation, offset=offset)


# -- root systems ----------------------------------------------------------


@dataclass(frozen=True)
class Root:
    weight: int
    functional: tuple[float, ...]

    def __call__(self, v) -> float:
        return float(np.dot(self.functional, v))


@dataclass(frozen=True)
class RootSystem:
    """Roots with multiplicities, evaluated on factor-norm direction parameters."""

    roots: tuple[Root, ...]
    name: str = ""

    def __post_init__(self):
        if any(r.weight < 0 for r in self.roots):
            raise ValueError("root weights must be nonnegative")


def root_trace(roots: RootSystem, v) -> float:
    """Mean curvature of horospheres from roots: ``-sum k_a |a(v)|``."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("direction parameters must have unit length")
    return -math.fsum(r.weight * abs(r(v)) for r in roots.roots)


def real_hyperbolic_roots(n: int) -> RootSystem:
    return RootSystem((Root(n - 1, (1.0,)),), name=f"H{n}")


def complex_hyperbolic_roots(m: int) -> RootSystem:
    return RootSystem((Root(2 * m - 2, (1.0,)), Root(1, (2.0,))), name=f"CH{m}")


def hyperbolic_plane_product_roots() -> RootSystem:
    return RootSystem((Root(1, (1.0, 0.0)), Root(1, (0.0, 1.0))), name="H2xH2")


# -- catalog ---------------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    key: str
    model: CurvatureModel
    description: str
    stable: tuple[float, ...] | None
    conjugate_free: bool = True
    harmonic: bool = True

    @property
    def alpha(self) -> float | None:
        return None if self.stable is None else 0.0 - math.fsum(self.stable)

    @property
    def det_v(self) -> float | None:
        return None if self.stable is None else math.prod(-2.0 * u for u in self.stable) + 0.0


def periodic_example() -> CurvatureModel:
    """Non-harmonic diagonal model with curvature ``-1 - 0.3 cos(2 pi t)``."""
    return periodic(1.0, [FourierSeries(-1.0, (-0.3,))])


def _catalog() -> list[CatalogEntry]:
    h2xr = product(Factor(-1.0, 2), Factor(0.0, 1), 0.6)
    h2xh2 = product(Factor(-1.0, 2), Factor(-1.0, 2), 1.0 / math.sqrt(2.0))
    r = 1.0 / math.sqrt(2.0)
    return [
        CatalogEntry("H2", real_hyperbolic(2), "real hyperbolic plane, kappa=-1", (-1.0,)),
        CatalogEntry("H3", real_hyperbolic(3), "real hyperbolic 3-space, kappa=-1", (-1.0, -1.0)),
        CatalogEntry("H4", real_hyperbolic(4), "real hyperbolic 4-space, kappa=-1", (-1.0,) * 3),
        CatalogEntry("CH2", complex_hyperbolic(2), "complex hyperbolic plane, R=diag(-4,-1,-1)",
                     (-2.0, -1.0, -1.0)),
        CatalogEntry("flat3", flat(3), "Euclidean 3-space", (0.0, 0.0)),
        CatalogEntry("sphere2", sphere(2), "round 2-sphere (conjugate point at pi)", None,
                     conjugate_free=False, harmonic=False),
        CatalogEntry("H2xR", h2xr, "H2 x R with split c=0.6, R=diag(-0.36, 0)", (-0.6, 0.0),
                     harmonic=False),
        CatalogEntry("H2xH2", h2xh2, "H2 x H2 with split c=1/sqrt2", (-r, -r, 0.0), harmonic=False),
        CatalogEntry("periodic", periodic_example(), "diagonal kappa(t) = -1 - 0.3 cos(2 pi t)", None,
                     harmonic=False),
    ]


CATALOG: dict[str, CatalogEntry] = {e.key: e for e in _catalog()}


def catalog_model(key: str) -> CurvatureModel:
    return CATALOG[key].model


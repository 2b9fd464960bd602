"""Rigidity diagnostics built on ``V = U^u - U^s``.

Covers flow invariance of ``det V``, rank detection through ``ker V``,
bounded Jacobi fields, the trace splitting on products, the flat
degeneration, and Bolton's certificate for an Anosov geodesic flow.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import HarmonicityError, SingularVError
from .jacobi import DEFAULT_H, integrate_jacobi
from .models import CurvatureModel, Factor, constant, curvature_batch, product
from .riccati import derivative, propagate_riccati, stable_riccati, unstable_riccati
from .symop import SymOp, eigenpairs, is_nsd, is_psd, operator_norm, spectrum

PSD_TOL = 1e-8
HARMONICITY_GATE = 1e-6
BETA_SPREAD_TOL = 1e-6


def _threads() -> int:
    raw = os.environ.get("HOROLAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


def parallel_map(fn, items):
    """Ordered map over independent items, capped by ``HOROLAB_THREADS``."""
    items = list(items)
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class FlowSample:
    params: tuple
    U_s: SymOp
    U_u: SymOp
    V: SymOp
    converged: bool = True

    @property
    def v_psd(self) -> bool:
        return is_psd(self.V, PSD_TOL)

    def to_dict(self) -> dict:
        return {
            "params": list(self.params),
            "U_s": self.U_s.tolist(),
            "U_u": self.U_u.tolist(),
            "V": self.V.tolist(),
            "converged": self.converged,
        }


def compute_V(model: CurvatureModel, tol: float = 1e-9, T_max: float = 40.0, h: float = DEFAULT_H,
              params: tuple = (), strict: bool = True) -> FlowSample:
    stable = stable_riccati(model, tol, T_max, h, strict=strict)
    unstable = unstable_riccati(model, tol, T_max, h, strict=strict)
    return FlowSample(tuple(params), stable.U, unstable.U, unstable.U - stable.U,
                      stable.converged and unstable.converged)


# -- Lemma-level checks ----------------------------------------------------


@dataclass
class InvarianceResult:
    """Outcome of following ``V`` along one orbit."""

    det_deviation: float
    log_derivative_deviation: float
    t: np.ndarray = field(repr=False)
    det_V: np.ndarray = field(repr=False)
    tr_Us: np.ndarray = field(repr=False)
    tr_Uu: np.ndarray = field(repr=False)
    singular: bool = False

    def __iter__(self):
        return iter((self.det_deviation, self.log_derivative_deviation))


def detV_flow_invariance(model: CurvatureModel, t_max: float = 10.0, h: float = DEFAULT_H,
                         tol: float = 1e-9, T_max: float = 40.0, kernel_tol: float | None = None) -> InvarianceResult:
    """Follow ``det V`` along the orbit over ``[0, t_max]``.

    ``U^u`` is propagated forward from ``t = 0`` and ``U^s`` backward from
    ``t = t_max``; both directions are the contracting ones for the Riccati
    flow, so integration error does not grow.  Returns the largest change of
    ``det V`` and the largest violation of
    ``d/dt log det V = -(tr U^u + tr U^s)``.  When ``V(0)`` is singular the
    first number is ``max |det V(t)|`` and the second is NaN.
    """
    U_u0 = unstable_riccati(model, tol, T_max, h).U
    U_s_end = stable_riccati(model.shifted(t_max), tol, T_max, h).U
    fwd = propagate_riccati(model, U_u0, 0.0, t_max, h)
    bwd = propagate_riccati(model, U_s_end, t_max, 0.0, h)
    Uu = fwd.U
    Us = bwd.U[::-1]
    V = Uu - Us
    t = fwd.t
    sign, logdet = np.linalg.slogdet(V)
    det = sign * np.exp(logdet)
    tr_s = np.trace(Us, axis1=1, axis2=2)
    tr_u = np.trace(Uu, axis1=1, axis2=2)
    scale = max(1.0, abs(float(np.trace(V[0]))))
    ktol = kernel_tol if kernel_tol is not None else 1e-6 * scale
    if spectrum(SymOp(0.5 * (V[0] + V[0].T))).min <= ktol:
        return InvarianceResult(float(np.max(np.abs(det))), float("nan"), t, det, tr_s, tr_u, singular=True)
    if np.any(sign != sign[0]) or np.any(sign == 0):
        raise SingularVError("det V changes sign along the orbit")
    dlog, idx = derivative(logdet, fwd.t[1] - fwd.t[0])
    ident = np.abs(dlog + tr_u[idx] + tr_s[idx])
    return InvarianceResult(float(np.max(np.abs(det - det[0]))), float(np.max(ident)), t, det, tr_s, tr_u)


def default_kernel_tol(V: SymOp) -> float:
    return 1e-6 * max(1.0, abs(V.trace()))


def rank_estimate(sample: FlowSample, kernel_tol: float | None = None) -> int:
    """``1 + dim ker V``: the geodesic direction plus the bounded Jacobi fields."""
    ktol = default_kernel_tol(sample.V) if kernel_tol is None else kernel_tol
    if not ktol > 0:
        raise ValueError("kernel_tol must be positive")
    return 1 + sum(1 for lam in spectrum(sample.V).eigenvalues if abs(lam) <= ktol)


def kernel_vectors(sample: FlowSample, kernel_tol: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal eigenvectors of ``V`` split into (kernel, complement) columns."""
    ktol = default_kernel_tol(sample.V) if kernel_tol is None else kernel_tol
    values, vectors = eigenpairs(sample.V)
    mask = np.abs(values) <= ktol
    return vectors[:, mask], vectors[:, ~mask]


BOUNDED = "bounded"
EXPONENTIAL = "exponential growth"
BOUNDED_TOL = 1e-3


@dataclass
class BoundedJacobiResult:
    sup_norm: float
    classification: str
    forward_norm: float
    backward_norm: float


def bounded_jacobi_check(model: CurvatureModel, X, t_max: float = 10.0, h: float = DEFAULT_H,
                         U_s: SymOp | None = None, tol: float = 1e-9, T_max: float = 40.0) -> BoundedJacobiResult:
    """Follow the stable Jacobi field ``J(0) = X, J'(0) = U^s X`` both ways along the geodesic.

    Without focal points a bounded Jacobi field has constant norm, so the
    field counts as bounded when its norm never exceeds ``1 + BOUNDED_TOL``
    on ``[-t_max, t_max]``; anything else is classified as exponential growth.
    """
    X = np.asarray(X, dtype=float).reshape(-1, 1)
    if abs(np.linalg.norm(X) - 1.0) > 1e-9:
        raise ValueError("X must be a unit vector")
    if U_s is None:
        U_s = stable_riccati(model, tol, T_max, h).U
    Xp = U_s.entries @ X
    fwd = integrate_jacobi(model, X, Xp, 0.0, t_max, h)
    bwd = integrate_jacobi(model, X, Xp, 0.0, -t_max, h)
    norms_f = np.linalg.norm(fwd.J[:, :, 0], axis=1)
    norms_b = np.linalg.norm(bwd.J[:, :, 0], axis=1)
    sup = float(max(norms_f.max(), norms_b.max()))
    nf, nb = float(norms_f[-1]), float(norms_b[-1])
    bounded = sup <= 1.0 + BOUNDED_TOL
    return BoundedJacobiResult(sup, BOUNDED if bounded else EXPONENTIAL, nf, nb)


@dataclass
class ProductTraceResult:
    lhs: float
    rhs: float
    deviation: float
    c: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.deviation))


def _factor_trace(kappa: float, n: int, tol, T_max, h) -> float:
    if n < 2:
        return 0.0
    return stable_riccati(constant(kappa, n), tol, T_max, h).U.trace()


def product_trace_check(kappa1: float, n1: int, kappa2: float, n2: int, c: float,
                        tol: float = 1e-9, T_max: float = 256.0, h: float = DEFAULT_H) -> ProductTraceResult:
    """Compare ``tr U^s`` on the product with ``c tr U_1^s + s tr U_2^s`` from unit-speed factors."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("split c must lie in [0,1]")
    model = product(Factor(kappa1, n1), Factor(kappa2, n2), c)
    lhs = stable_riccati(model, tol, T_max, h).U.trace()
    rhs = c * _factor_trace(kappa1, n1, tol, T_max, h) + model.s * _factor_trace(kappa2, n2, tol, T_max, h)
    return ProductTraceResult(lhs, rhs, abs(lhs - rhs), c)


@dataclass
class FlatnessResult:
    passed: bool
    hypothesis_met: bool
    reason: str
    trace: float
    norm_U: float
    max_curvature: float | None = None

    def __bool__(self):
        return self.passed


def flatness_check(model: CurvatureModel, tol: float = 1e-2, U_s: SymOp | None = None,
                   riccati_tol: float = 1e-9, T_max: float = 40.0, h: float = DEFAULT_H,
                   t_window: float = 10.0) -> FlatnessResult:
    """Zero mean curvature of horospheres forces ``U^s = 0`` and then ``R = 0``.

    Checked in order: the trace hypothesis, negative semidefiniteness,
    vanishing of ``U^s``, and vanishing of ``R`` over ``[0, t_window]``.
    """
    if U_s is None:
        U_s = stable_riccati(model, riccati_tol, T_max, h).U
    tr = U_s.trace()
    nU = operator_norm(U_s)
    if abs(tr) > tol:
        return FlatnessResult(True, False, "hypothesis not met", tr, nU)
    if not is_nsd(U_s, tol):
        return FlatnessResult(False, True, "not negative semidefinite", tr, nU)
    if nU > U_s.dim * tol:
        return FlatnessResult(False, True, "stable solution does not vanish", tr, nU)
    ts = np.linspace(0.0, t_window, 201)
    r = float(np.max(np.linalg.norm(curvature_batch(model, ts), ord=2, axis=(1, 2))))
    if r > tol:
        return FlatnessResult(False, True, "curvature does not vanish", tr, nU, r)
    return FlatnessResult(True, True, "flat", tr, nU, r)


# -- Bolton certificate ----------------------------------------------------

ANOSOV = "Anosov"
FLAT = "Flat"
HIGHER_RANK = "HigherRank"
INDETERMINATE = "Indeterminate"


@dataclass
class AnosovReport:
    alpha: float
    alpha_spread: float
    beta: float
    K: float
    delta_bound: float
    delta_bound_sharp: float
    delta_actual: float
    n: int
    verdict: str
    beta_spread: float = 0.0
    max_eig_V: float = 0.0
    sample_count: int = 0
    checks: dict = field(default_factory=dict)
    samples: list[FlowSample] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_spread": self.alpha_spread,
            "beta": self.beta,
            "beta_spread": self.beta_spread,
            "K": self.K,
            "delta_bound": self.delta_bound,
            "delta_bound_sharp": self.delta_bound_sharp,
            "delta_actual": self.delta_actual,
            "max_eig_V": self.max_eig_V,
            "n": self.n,
            "verdict": self.verdict,
            "sample_count": self.sample_count,
            "checks": dict(self.checks),
            "samples": [s.to_dict() for s in self.samples],
        }


def bolton_certificate(samples: Sequence[tuple[tuple, CurvatureModel]], tol: float = 1e-9, T_max: float = 40.0,
                       h: float = DEFAULT_H, *, flat_tol: float = 1e-6, gate: float = HARMONICITY_GATE,
                       kernel_tol: float | None = None) -> AnosovReport:
    """Check Bolton's hypotheses on sampled geodesics and assemble the constants.

    ``samples`` pairs direction parameters with the model for that geodesic
    (a product split, or an orbit time offset for single-geodesic models).
    A non-constant ``tr U^s`` raises ``HarmonicityError`` carrying the
    partial report in ``details["report"]``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("at least one sample direction is required")
    n = samples[0][1].n
    flows = parallel_map(lambda s: compute_V(s[1], tol, T_max, h, params=s[0], strict=False), samples)
    alphas = np.array([-f.U_s.trace() for f in flows])
    alpha = float(np.mean(alphas))
    spread = float(np.max(alphas) - np.min(alphas))
    betas = np.array([f.V.det() for f in flows])
    beta = float(np.mean(betas))
    spectra = [spectrum(f.V) for f in flows]
    K = max(operator_norm(f.U_s) for f in flows)
    delta_actual = min(s.min for s in spectra)
    max_eig = max(s.max for s in spectra)
    if alpha > 0:
        delta_bound = beta * (2 * alpha) ** (1 - n)
        delta_bound_sharp = beta * (2 * alpha) ** (2 - n)
    else:
        delta_bound = delta_bound_sharp = 0.0
    report = AnosovReport(
        alpha=alpha, alpha_spread=spread, beta=beta, K=K, delta_bound=delta_bound,
        delta_bound_sharp=delta_bound_sharp, delta_actual=delta_actual, n=n,
        verdict=INDETERMINATE, beta_spread=float(np.max(betas) - np.min(betas)),
        max_eig_V=max_eig, sample_count=len(flows), samples=flows,
    )
    report.checks = {
        "converged": all(f.converged for f in flows),
        "V_psd": all(f.v_psd for f in flows),
        "max_eig_V_le_2alpha": max_eig <= 2 * alpha + PSD_TOL,
        "min_eig_V_ge_delta_bound": delta_actual >= delta_bound - PSD_TOL,
        "norm_Us_le_alpha": K <= alpha + PSD_TOL,
        "Us_nsd": all(is_nsd(f.U_s, PSD_TOL) for f in flows),
    }
    if abs(alpha) <= flat_tol and K <= flat_tol:
        report.verdict = FLAT
        return report
    if spread > gate:
        raise HarmonicityError(
            f"tr U^s varies by {spread:.6g} over {len(flows)} samples (gate {gate:g})",
            alpha_spread=spread, report=report,
        )
    ktol = kernel_tol if kernel_tol is not None else 1e-6 * max(1.0, 2 * abs(alpha))
    if abs(beta) <= ktol and alpha > flat_tol:
        report.verdict = HIGHER_RANK
        return report
    if (
        report.checks["converged"]
        and delta_actual > 0
        and report.beta_spread <= BETA_SPREAD_TOL
        and report.checks["min_eig_V_ge_delta_bound"]
    ):
        report.verdict = ANOSOV
    return report


def orbit_samples(model: CurvatureModel, offsets: Sequence[float]) -> list[tuple[tuple, CurvatureModel]]:
    return [((float(t),), model.shifted(float(t))) for t in offsets]


def split_samples(model: CurvatureModel, splits: Sequence[float]) -> list[tuple[tuple, CurvatureModel]]:
    f1, f2 = model.factors
    out = []
    for c in splits:
        m = product(f1, f2, float(c))
        out.append(((float(c), m.s), m))
    return out


"""Stable and unstable solutions of ``U' + U^2 + R = 0``.

``U^s`` is the increasing limit of the shape operators ``U_T = E_T'(0)`` as
``T`` runs through ``1, 2, 4, ...``.  Along flat directions ``U_T`` only
approaches its limit like ``-1/T``, so every pair of consecutive iterates is
also combined into a Richardson estimate that cancels that term; the
estimate is what gets reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FinitenessError, NoConvergenceError
from .jacobi import DEFAULT_H, stable_shape_operators
from .models import CurvatureModel, curvature_batch
from .symop import SymOp, is_psd, operator_norm, spectrum, symmetrize

STABLE = "stable"
UNSTABLE = "unstable"
MONOTONE_TOL = 1e-8
RICCATI_BLOWUP = 1e10


@dataclass
class RiccatiResult:
    U: SymOp
    side: str
    T_schedule: list[float]
    gaps: list[float]
    converged: bool
    model: CurvatureModel
    iterates: list[SymOp] = field(default_factory=list, repr=False)
    raw_gaps: list[float] = field(default_factory=list)
    extrapolated: bool = True

    @property
    def dim(self) -> int:
        return self.U.dim

    def increments(self) -> list[SymOp]:
        return [b - a for a, b in zip(self.iterates, self.iterates[1:])]

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "dim": self.dim,
            "U": self.U.tolist(),
            "T_schedule": list(self.T_schedule),
            "gaps": list(self.gaps),
            "raw_gaps": list(self.raw_gaps),
            "converged": self.converged,
            "extrapolated": self.extrapolated,
        }


def doubling_schedule(T_max: float) -> list[float]:
    """``1, 2, 4, ...`` up to and including the largest power of two <= ``T_max``."""
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    return [float(2**k) for k in range(int(math.floor(math.log2(T_max) + 1e-12)) + 1)]


def _richardson(U_prev: SymOp, U_next: SymOp, T_prev: float, T_next: float) -> SymOp:
    # exact when U_T = U - a/T
    w = T_prev / (T_next - T_prev)
    return symmetrize(U_next.entries + w * (U_next.entries - U_prev.entries))


def stable_riccati(
    model: CurvatureModel,
    tol: float = 1e-9,
    T_max: float = 40.0,
    h: float = DEFAULT_H,
    *,
    extrapolate: bool = True,
    strict: bool = True,
) -> RiccatiResult:
    """Stable Riccati solution at ``t = 0`` as the monotone limit of ``U_T``.

    Converged means the last raw gap ``|U_{T_k} - U_{T_{k-1}}|`` or (with
    ``extrapolate``) the last gap between consecutive Richardson estimates is
    at most ``tol``.  With ``strict`` an unconverged run raises
    ``NoConvergenceError``; otherwise the result is returned flagged.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    schedule = doubling_schedule(T_max)
    iterates = stable_shape_operators(model, schedule, h)
    for k, (a, b) in enumerate(zip(iterates, iterates[1:])):
        low = spectrum(b - a).min
        if low < -MONOTONE_TOL:
            raise NoConvergenceError(
                f"U_T decreased between T={schedule[k]:g} and T={schedule[k + 1]:g} (min eig {low:.3g})",
                min_eigenvalue=low,
            )
    raw_gaps = [operator_norm(b - a) for a, b in zip(iterates, iterates[1:])]
    if extrapolate and len(iterates) > 1:
        estimates = [
            _richardson(a, b, Ta, Tb)
            for a, b, Ta, Tb in zip(iterates, iterates[1:], schedule, schedule[1:])
        ]
        gaps = [operator_norm(b - a) for a, b in zip(estimates, estimates[1:])]
    else:
        estimates = iterates
        gaps = raw_gaps
    converged = bool(gaps and gaps[-1] <= tol) or bool(raw_gaps and raw_gaps[-1] <= tol)
    result = RiccatiResult(
        U=estimates[-1],
        side=STABLE,
        T_schedule=schedule,
        gaps=gaps,
        converged=converged,
        model=model,
        iterates=iterates,
        raw_gaps=raw_gaps,
        extrapolated=extrapolate,
    )
    if strict and not converged:
        last = gaps[-1] if gaps else float("nan")
        raise NoConvergenceError(
            f"stable Riccati solution not converged at T_max={T_max:g}: gap {last:.3g} > tol {tol:g}",
            gap=last,
            T_max=T_max,
        )
    return result


def unstable_riccati(
    model: CurvatureModel,
    tol: float = 1e-9,
    T_max: float = 40.0,
    h: float = DEFAULT_H,
    **kwargs,
) -> RiccatiResult:
    """Unstable solution ``U^u(v) = -U^s(-v)`` via the orientation-reversed geodesic."""
    res = stable_riccati(model.reversed(), tol, T_max, h, **kwargs)
    res.U = -res.U
    res.iterates = [-U for U in res.iterates]
    res.side = UNSTABLE
    res.model = model
    return res


@dataclass
class RiccatiPath:
    t: np.ndarray
    U: np.ndarray
    model: CurvatureModel
    h: float

    def __len__(self):
        return len(self.t)

    def at(self, i: int) -> SymOp:
        return symmetrize(self.U[i])

    def traces(self) -> np.ndarray:
        return np.trace(self.U, axis1=1, axis2=2)


def propagate_riccati(model: CurvatureModel, U0: SymOp, t0: float, t1: float, h: float = DEFAULT_H) -> RiccatiPath:
    """RK4 integration of ``U' = -U^2 - R(t)`` from ``t0`` to ``t1`` (either direction)."""
    if not h > 0:
        raise ValueError("step h must be positive")
    if t1 == t0:
        raise ValueError("integration interval is empty")
    n = max(1, int(math.ceil(abs(t1 - t0) / h - 1e-9)))
    hs = (t1 - t0) / n
    starts = t0 + hs * np.arange(n)
    R0 = curvature_batch(model, starts)
    Rh = curvature_batch(model, starts + 0.5 * hs)
    R1 = curvature_batch(model, starts + hs)
    out = np.empty((n + 1, U0.dim, U0.dim))
    U = np.array(U0.entries)
    out[0] = U
    for k in range(n):
        k1 = -U @ U - R0[k]
        Y = U + 0.5 * hs * k1
        k2 = -Y @ Y - Rh[k]
        Y = U + 0.5 * hs * k2
        k3 = -Y @ Y - Rh[k]
        Y = U + hs * k3
        k4 = -Y @ Y - R1[k]
        U = U + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        U = 0.5 * (U + U.T)
        if not np.all(np.abs(U) <= RICCATI_BLOWUP):
            t_bad = t0 + hs * (k + 1)
            raise FinitenessError(f"Riccati solution blew up near t={t_bad:.6g}", t=t_bad)
        out[k + 1] = U
    t = t0 + hs * np.arange(n + 1)
    t[-1] = t1
    return RiccatiPath(t, out, model, abs(hs))


def derivative(values: np.ndarray, h: float) -> tuple[np.ndarray, slice]:
    """Derivative along axis 0 of uniformly sampled data.

    Uses the fourth-order five-point stencil when there are at least five
    samples and plain central differences otherwise.  Returns the derivative
    and the slice of samples it refers to.
    """
    if len(values) >= 5:
        d = (-values[4:] + 8 * values[3:-1] - 8 * values[1:-3] + values[:-4]) / (12 * h)
        return d, slice(2, len(values) - 2)
    if len(values) >= 3:
        return (values[2:] - values[:-2]) / (2 * h), slice(1, len(values) - 1)
    raise ValueError("need at least three samples")


def riccati_residuals(path: RiccatiPath, model: CurvatureModel | None = None) -> np.ndarray:
    model = model or path.model
    hs = (path.t[-1] - path.t[0]) / (len(path.t) - 1)
    dU, idx = derivative(path.U, hs)
    U = path.U[idx]
    R = curvature_batch(model, path.t[idx])
    return np.linalg.norm(dU + U @ U + R, ord=2, axis=(1, 2))


def riccati_residual(path: RiccatiPath, model: CurvatureModel | None = None) -> float:
    """Max over interior samples of ``|U' + U^2 + R|`` (operator norm)."""
    return float(np.max(riccati_residuals(path, model)))


def residual_bound(path: RiccatiPath, model: CurvatureModel | None = None) -> np.ndarray:
    """Per-sample allowance ``10 h^2 (1 + |U|^3 + |R| |U|)``."""
    model = model or path.model
    _, idx = derivative(path.U, path.h) if len(path.U) >= 3 else (None, slice(None))
    U = path.U[idx]
    nU = np.linalg.norm(U, ord=2, axis=(1, 2))
    nR = np.linalg.norm(curvature_batch(model, path.t[idx]), ord=2, axis=(1, 2))
    return 10 * path.h**2 * (1 + nU**3 + nR * nU)


def backward_limit(model: CurvatureModel, T_max: float = 40.0, h: float = DEFAULT_H) -> SymOp:
    """Integrate the Riccati equation backward from ``-(|R|^(1/2) + 1) I`` at ``T_max`` to 0.

    The stable solution attracts backward-in-time solutions starting below it,
    which makes this an independent route to ``U^s`` for constant curvature.
    """
    ts = np.linspace(0.0, T_max, 64)
    r = float(np.max(np.linalg.norm(curvature_batch(model, ts), ord=2, axis=(1, 2))))
    start = SymOp.identity(model.dim, -(math.sqrt(r) + 1.0))
    path = propagate_riccati(model, start, T_max, 0.0, h)
    return path.at(-1)


def squeeze_ok(result: RiccatiResult, tol: float = MONOTONE_TOL) -> bool:
    """``U^s - U_T`` is positive semidefinite for every iterate."""
    return all(is_psd(result.U - U_T, tol) for U_T in result.iterates)

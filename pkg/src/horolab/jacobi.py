"""Operator Jacobi equation ``J'' + R(t) J = 0`` along a geodesic.

The first-order system ``(J, J')' = (J', -R J)`` is linear, so one classical
RK4 step is a fixed ``2d x 2d`` matrix built from ``R`` at ``t``, ``t+h/2``
and ``t+h``.  Those step matrices are built in vectorized chunks and then
applied one after another.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import ConditioningError, ConjugatePointError, NumericalBlowupError
from .models import CurvatureModel, curvature_batch
from .symop import SymOp, symmetrize

DEFAULT_H = 1e-3
BLOWUP = 1e150
RESCALE_AT = 1e100
CHUNK = 4096


@dataclass(frozen=True)
class JacobiState:
    t: float
    J: np.ndarray
    Jp: np.ndarray


@dataclass
class JacobiPath:
    """Uniformly sampled solution of the Jacobi equation.

    ``J`` and ``Jp`` have shape ``(len(t), dim, k)``; ``k`` is the number of
    Jacobi fields carried (``dim`` for a tensor, 1 for a single field).
    """

    t: np.ndarray
    J: np.ndarray
    Jp: np.ndarray
    model: CurvatureModel
    h: float

    def __len__(self):
        return len(self.t)

    @property
    def samples(self) -> Iterator[JacobiState]:
        for i in range(len(self.t)):
            yield JacobiState(float(self.t[i]), self.J[i], self.Jp[i])

    def final(self) -> JacobiState:
        return JacobiState(float(self.t[-1]), self.J[-1], self.Jp[-1])

    def to_csv(self, path) -> list[str]:
        """Write ``t, J (row-major), J' (row-major)`` and return the header."""
        d, k = self.J.shape[1:]
        header = ["t"]
        header += [f"J_{i}_{j}" for i in range(d) for j in range(k)]
        header += [f"Jp_{i}_{j}" for i in range(d) for j in range(k)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.t)):
                row = [self.t[i], *self.J[i].ravel(), *self.Jp[i].ravel()]
                w.writerow([format(float(x), ".17g") for x in row])
        return header


# -- RK4 machinery ---------------------------------------------------------


def _generators(R: np.ndarray) -> np.ndarray:
    """``M = [[0, I], [-R, 0]]`` for a batch of curvature operators."""
    m, d, _ = R.shape
    M = np.zeros((m, 2 * d, 2 * d))
    M[:, :d, d:] = np.eye(d)
    M[:, d:, :d] = -R
    return M


def _step_matrices(model: CurvatureModel, starts: np.ndarray, h: float) -> np.ndarray:
    """RK4 propagators for the steps beginning at each time in ``starts``."""
    d2 = 2 * model.dim
    M0 = _generators(curvature_batch(model, starts))
    Mh = _generators(curvature_batch(model, starts + 0.5 * h))
    M1 = _generators(curvature_batch(model, starts + h))
    eye = np.eye(d2)
    K1 = M0
    K2 = Mh @ (eye + 0.5 * h * K1)
    K3 = Mh @ (eye + 0.5 * h * K2)
    K4 = M1 @ (eye + h * K3)
    return eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _grid(t0: float, t1: float, h: float) -> tuple[int, float]:
    if not h > 0:
        raise ValueError("step h must be positive")
    span = t1 - t0
    if span == 0:
        raise ValueError("integration interval is empty")
    n = max(1, int(math.ceil(abs(span) / h - 1e-9)))
    return n, span / n


def _step_powers(model, t0, hs, m):
    """``P, P^2, ..., P^m`` for the constant step matrix ``P``, built by doubling."""
    P = _step_matrices(model, np.array([t0]), hs)
    powers = P
    while len(powers) < m:
        powers = np.concatenate([powers, powers @ powers[-1]])
    return powers[:m]


def _march(model, y0, t0, hs, nsteps, *, keep=True, renormalize=False, on_chunk=None):
    """Apply ``nsteps`` RK4 steps of signed size ``hs`` to ``y0``.

    With ``renormalize`` the state is divided by its max entry whenever that
    exceeds ``RESCALE_AT`` and the logarithm of the factor is accumulated;
    the equation is linear so this only changes the overall scale.

    ``on_chunk(first_step, buffer, log_scale)`` sees every chunk of new states
    and may return True to stop early.
    """
    y = np.array(y0, dtype=float)
    states = np.empty((nsteps + 1,) + y.shape) if keep else None
    logs = np.zeros(nsteps + 1) if keep else None
    if keep:
        states[0] = y
    log_scale = 0.0
    powers = _step_powers(model, t0, hs, min(nsteps, CHUNK)) if model.time_independent else None
    done = nsteps
    for k0 in range(0, nsteps, CHUNK):
        k1 = min(nsteps, k0 + CHUNK)
        buf = np.empty((k1 - k0,) + y.shape)
        if powers is not None:
            buf[:] = powers[: k1 - k0] @ y
            y = buf[-1]
        else:
            P = _step_matrices(model, t0 + hs * np.arange(k0, k1), hs)
            for i in range(k1 - k0):
                y = P[i] @ y
                buf[i] = y
        if not renormalize and not np.all(np.abs(buf) <= BLOWUP):
            raise NumericalBlowupError(
                f"Jacobi solution exceeded {BLOWUP:g} before t={t0 + hs * k1:.6g}", t=t0 + hs * k1
            )
        if keep:
            states[k0 + 1 : k1 + 1] = buf
            logs[k0 + 1 : k1 + 1] = log_scale
        stop = on_chunk(k0, buf, log_scale) if on_chunk else False
        if renormalize:
            scale = float(np.max(np.abs(y)))
            if scale > RESCALE_AT:
                y = y / scale
                log_scale += math.log(scale)
        if stop:
            done = k1
            break
    return states, logs, y, log_scale, done


def _single_step(model, y, t, hs):
    return _step_matrices(model, np.array([t]), hs)[0] @ y


def integrate_jacobi(model: CurvatureModel, J0, Jp0, t0: float, t1: float, h: float = DEFAULT_H) -> JacobiPath:
    """Integrate ``J'' + R J = 0`` from ``(J0, Jp0)`` at ``t0`` to ``t1``.

    Runs backward when ``t1 < t0``.  The step is shrunk slightly if needed so
    that ``t1`` falls on the grid.
    """
    J0 = np.atleast_2d(np.asarray(J0, dtype=float))
    Jp0 = np.atleast_2d(np.asarray(Jp0, dtype=float))
    if J0.shape[0] != model.dim:
        J0, Jp0 = J0.T, Jp0.T
    if J0.shape != Jp0.shape or J0.shape[0] != model.dim:
        raise ValueError(f"initial data must have {model.dim} rows")
    n, hs = _grid(t0, t1, h)
    states, _, _, _, _ = _march(model, np.vstack([J0, Jp0]), t0, hs, n)
    d = model.dim
    t = t0 + hs * np.arange(n + 1)
    t[-1] = t1
    return JacobiPath(t, states[:, :d, :], states[:, d:, :], model, abs(hs))


def fundamental_pair(model: CurvatureModel, T: float, h: float = DEFAULT_H) -> tuple[JacobiPath, JacobiPath]:
    """Solutions ``A`` (A(0)=I, A'(0)=0) and ``B`` (B(0)=0, B'(0)=I) on ``[0, T]``."""
    if not T > 0:
        raise ValueError("T must be positive")
    d = model.dim
    n, hs = _grid(0.0, T, h)
    states, _, _, _, _ = _march(model, np.eye(2 * d), 0.0, hs, n)
    t = hs * np.arange(n + 1)
    t[-1] = T
    A = JacobiPath(t, states[:, :d, :d], states[:, d:, :d], model, hs)
    B = JacobiPath(t, states[:, :d, d:], states[:, d:, d:], model, hs)
    return A, B


# -- two-point tensors -----------------------------------------------------


def solve_full_pivot(B, A) -> np.ndarray:
    """Solve ``B X = A`` by Gaussian elimination with complete pivoting."""
    M = np.array(B, dtype=float, copy=True)
    R = np.array(A, dtype=float, copy=True)
    if R.ndim == 1:
        R = R[:, None]
    n = M.shape[0]
    perm = np.arange(n)
    for k in range(n):
        sub = np.abs(M[k:, k:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        i += k
        j += k
        if M[i, j] == 0.0:
            raise ConditioningError("matrix is singular", pivot=k)
        M[[k, i]] = M[[i, k]]
        R[[k, i]] = R[[i, k]]
        M[:, [k, j]] = M[:, [j, k]]
        perm[[k, j]] = perm[[j, k]]
        f = M[k + 1 :, k] / M[k, k]
        M[k + 1 :, k:] -= np.outer(f, M[k, k:])
        R[k + 1 :] -= np.outer(f, R[k])
    X = np.empty_like(R)
    for k in range(n - 1, -1, -1):
        X[k] = (R[k] - M[k, k + 1 :] @ X[k + 1 :]) / M[k, k]
    out = np.empty_like(X)
    out[perm] = X
    return out


def _norm(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _endpoint_coefficient(AT, BT) -> np.ndarray:
    """``C = -B(T)^{-1} A(T)`` with a relative residual guard."""
    C = -solve_full_pivot(BT, AT)
    resid = _norm(BT @ C + AT)
    scale = _norm(BT) * _norm(C) + _norm(AT)
    if resid > 1e-8 * scale:
        raise ConditioningError(f"endpoint solve residual {resid / scale:.3g} exceeds 1e-8",
                                residual=resid / scale)
    return C


def _conditioning(M: np.ndarray) -> float:
    sv = np.linalg.svd(M, compute_uv=False)
    return float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0


class _ConjugateMonitor:
    """Finds zeros of ``det B`` along a frame with ``B(0) = 0, B'(0) = I``.

    A sign change of ``det B`` catches zeros of odd multiplicity.  For even
    multiplicity (round spheres of dimension >= 3, say) the determinant
    keeps its sign, so the inertia of ``S = B^T B'`` is watched as well.
    ``S`` is congruent to ``U = B' B^{-1}``, whose eigenvalues jump from
    -inf to +inf at a conjugate point.  A drop in the number of negative
    eigenvalues of ``S`` therefore counts when ``B`` rather than ``B'`` is
    the nearly singular factor at that step.
    """

    def __init__(self):
        self.sign = None
        self.neg = None
        self.last = None

    @staticmethod
    def negatives(B, Bp) -> np.ndarray:
        S = np.swapaxes(B, -1, -2) @ Bp
        S = 0.5 * (S + np.swapaxes(S, -1, -2))
        return np.sum(np.linalg.eigvalsh(S) < 0, axis=-1)

    def feed(self, B: np.ndarray, Bp: np.ndarray) -> int | None:
        """Index of the first conjugate crossing in this batch, or None."""
        signs = np.linalg.slogdet(B)[0]
        neg = self.negatives(B, Bp)
        if self.sign is None:
            self.sign, self.neg, self.last = signs[0], neg[0], (B[0], Bp[0])
        prev_neg = np.concatenate([[self.neg], neg[:-1]])
        flips = np.nonzero((signs != self.sign) | (signs == 0))[0]
        first = int(flips[0]) if flips.size else None
        for i in np.nonzero(neg < prev_neg)[0]:
            if first is not None and i >= first:
                break
            B0, Bp0 = (B[i - 1], Bp[i - 1]) if i > 0 else self.last
            if min(_conditioning(B0), _conditioning(B[i])) <= min(_conditioning(Bp0), _conditioning(Bp[i])):
                first = int(i)
                break
        self.neg, self.last = neg[-1], (B[-1], Bp[-1])
        return first


def stable_endpoint_tensor(model: CurvatureModel, T: float, h: float = DEFAULT_H) -> tuple[JacobiPath, SymOp]:
    """Jacobi tensor ``E_T`` with ``E_T(0) = I`` and ``E_T(T) = 0``, and ``U_T = E_T'(0)``."""
    A, B = fundamental_pair(model, T, h)
    hit = _ConjugateMonitor().feed(B.J[1:], B.Jp[1:])
    if hit is not None or np.linalg.det(B.J[1]) <= 0:
        t_hit = float(B.t[1 + (hit or 0)])
        raise ConjugatePointError(f"det B changes sign near t={t_hit:.6g} <= T={T:g}", t=t_hit)
    C = _endpoint_coefficient(A.J[-1], B.J[-1])
    E = JacobiPath(A.t, A.J + B.J @ C, A.Jp + B.Jp @ C, model, A.h)
    if _norm(E.J[0] - np.eye(model.dim)) > 1e-12:
        raise ConditioningError("E_T(0) deviates from the identity")
    if _norm(E.J[-1]) > 1e-6 * max(1.0, _norm(A.J[-1])):
        raise ConditioningError("E_T(T) does not vanish", residual=_norm(E.J[-1]))
    return E, symmetrize(C)


def stable_shape_operators(model: CurvatureModel, schedule: Sequence[float], h: float = DEFAULT_H) -> list[SymOp]:
    """``U_T = E_T'(0)`` for every ``T`` in an increasing schedule.

    Integrates the fundamental matrix once up to the last ``T``, rescaling
    to avoid overflow, and checks ``det B`` for sign changes on the way.
    Only endpoint data is kept, so long schedules stay cheap in memory.
    """
    d = model.dim
    schedule = [float(T) for T in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] <= 0:
        raise ValueError("schedule must be positive and strictly increasing")
    out = []
    y = np.eye(2 * d)
    t = 0.0
    monitor = _ConjugateMonitor()
    for T in schedule:
        n, hs = _grid(t, T, h)

        def check(k0, buf, _log, t_start=t, hs=hs):
            hit = monitor.feed(buf[:, :d, d:], buf[:, d:, d:])
            if hit is not None:
                t_hit = t_start + hs * (k0 + hit + 1)
                raise ConjugatePointError(f"det B changes sign near t={t_hit:.6g}", t=t_hit)
            return False

        _, _, y, _, _ = _march(model, y, t, hs, n, keep=False, renormalize=True, on_chunk=check)
        scale = _norm(y)
        y = y / scale
        C = _endpoint_coefficient(y[:d, :d], y[:d, d:])
        if _norm(y[:d, :d] + y[:d, d:] @ C) > 1e-6 * max(1.0, _norm(y[:d, :d])):
            raise ConditioningError(f"E_T(T) does not vanish at T={T:g}")
        out.append(symmetrize(C))
        t = T
    return out


def integral_formula_tensor(model: CurvatureModel, T: float, t0: float = 0.1, h: float = DEFAULT_H):
    """``E_T(t) = J(t) int_t^T J^{-1}(s) J^{-1}(s)^* ds`` by composite Simpson quadrature.

    ``J`` is the solution with ``J(0)=0, J'(0)=I``; the quadrature starts at
    ``t0 > 0`` to stay away from the singularity at zero.  Returns the sample
    times in ``[t0, T]`` and ``E_T`` there.  Only meaningful for models whose
    ``J`` is symmetric, where the adjoint is the transpose.
    """
    _, B = fundamental_pair(model, T, h)
    keep = B.t >= t0 - 1e-12
    t = B.t[keep]
    J = B.J[keep]
    Jinv = np.linalg.inv(J)
    f = Jinv @ np.swapaxes(Jinv, -1, -2)
    cum = cumulative_simpson(f, x=t, axis=0, initial=0.0)
    tail = cum[-1] - cum
    return t, J @ tail


def conjugate_point_scan(model: CurvatureModel, t_max: float, h: float = DEFAULT_H, tol: float = 1e-7) -> float | None:
    """First ``t`` in ``(0, t_max]`` where ``det J`` vanishes, or None.

    Crossings between samples are refined by bisection using single RK4
    steps from the last sample before the crossing.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    d = model.dim
    n, hs = _grid(0.0, t_max, h)
    monitor = _ConjugateMonitor()
    found = {}

    def check(k0, buf, _log):
        hit = monitor.feed(buf[:, :d, d:], buf[:, d:, d:])
        if hit is None:
            found["prev"] = buf[-1]
            return False
        found["k"] = k0 + hit + 1
        found["left"] = buf[hit - 1] if hit > 0 else found.get("prev")
        return True

    _march(model, np.eye(2 * d), 0.0, hs, n, keep=False, renormalize=True, on_chunk=check)
    if "k" not in found:
        return None
    k = found["k"]
    a, b = hs * (k - 1), hs * k
    left = found["left"]
    if k == 1 or left is None:
        return b
    ref_sign = np.linalg.slogdet(left[:d, d:])[0]
    ref_neg = _ConjugateMonitor.negatives(left[:d, d:], left[d:, d:])
    while b - a > tol:
        mid = 0.5 * (a + b)
        y = _single_step(model, left, hs * (k - 1), mid - hs * (k - 1))
        crossed = (np.linalg.slogdet(y[:d, d:])[0] != ref_sign
                   or _ConjugateMonitor.negatives(y[:d, d:], y[d:, d:]) < ref_neg)
        if crossed:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


# -- volume growth ---------------------------------------------------------


@dataclass
class GrowthSeries:
    t: np.ndarray
    log_det: np.ndarray
    rate: np.ndarray


def volume_growth_series(model: CurvatureModel, t_probe: float, h: float = DEFAULT_H, every: float = 1.0) -> GrowthSeries:
    """``log det J(t)`` and its growth rate ``tr(J' J^{-1})`` at sample times.

    ``J`` is the Jacobi tensor with ``J(0)=0, J'(0)=I``; its determinant is
    the volume density of geodesic spheres, so the logarithmic derivative is
    their mean curvature and tends to the volume growth entropy.
    """
    d = model.dim
    n, hs = _grid(0.0, t_probe, h)
    stride = max(1, int(round(every / hs)))
    ts, logs, rates = [], [], []
    monitor = _ConjugateMonitor()

    def check(k0, buf, log_scale):
        hit = monitor.feed(buf[:, :d, d:], buf[:, d:, d:])
        if hit is not None:
            t_hit = hs * (k0 + hit + 1)
            raise ConjugatePointError(f"det J changes sign near t={t_hit:.6g}", t=t_hit)
        for i in range(len(buf)):
            k = k0 + i + 1
            if k % stride == 0 or k == n:
                J, Jp = buf[i, :d, d:], buf[i, d:, d:]
                ts.append(hs * k)
                logs.append(np.linalg.slogdet(J)[1] + d * log_scale)
                rates.append(float(np.trace(np.linalg.solve(J, Jp))))
        return False

    _march(model, np.eye(2 * d), 0.0, hs, n, keep=False, renormalize=True, on_chunk=check)
    return GrowthSeries(np.array(ts), np.array(logs), np.array(rates))


def volume_growth_rate(model: CurvatureModel, t_probe: float, h: float = DEFAULT_H) -> float:
    """Exponential growth rate of ``det J`` at ``t_probe``."""
    return float(volume_growth_series(model, t_probe, h, every=t_probe).rate[-1])


# -- diagnostics -----------------------------------------------------------


def wronskian(path: JacobiPath) -> np.ndarray:
    JT = np.swapaxes(path.J, -1, -2)
    JpT = np.swapaxes(path.Jp, -1, -2)
    return JT @ path.Jp - JpT @ path.J


def wronskian_drift(path: JacobiPath) -> float:
    """Largest change of the Wronskian relative to the solution's size, per unit time."""
    W = wronskian(path)
    scale = np.maximum(
        1.0, np.max(np.abs(path.J), axis=(1, 2)) * np.max(np.abs(path.Jp), axis=(1, 2))
    )
    drift = np.max(np.abs(W - W[0]), axis=(1, 2)) / scale
    span = abs(path.t[-1] - path.t[0])
    return float(np.max(drift)) / max(span, 1e-300)


def jacobi_residual(path: JacobiPath) -> np.ndarray:
    """``|J'' + R J|`` at interior samples, with ``J''`` by central differences of ``J'``.

    Each residual is relative to ``max(1, |J|)``.
    """
    hs = path.t[2:] - path.t[:-2]
    Jpp = (path.Jp[2:] - path.Jp[:-2]) / hs[:, None, None]
    R = curvature_batch(path.model, path.t[1:-1])
    res = np.max(np.abs(Jpp + R @ path.J[1:-1]), axis=(1, 2))
    return res / np.maximum(1.0, np.max(np.abs(path.J[1:-1]), axis=(1, 2)))

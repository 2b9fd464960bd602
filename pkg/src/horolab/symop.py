"""Small dense symmetric operators on the normal space of a geodesic.

Everything here works on dimensions of at most a few dozen, so the
eigen-solver is a plain cyclic Jacobi rotation sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import AsymmetryError

SYMMETRY_TOL = 1e-10
REPAIR_TOL = 1e-6
OFFDIAG_TOL = 1e-14
MAX_SWEEPS = 60


@dataclass(frozen=True, eq=False)
class SymOp:
    """Immutable symmetric operator stored as a dense ``dim x dim`` array."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValueError(f"SymOp needs a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("SymOp entries must be finite")
        skew = np.max(np.abs(a - a.T))
        if skew > SYMMETRY_TOL:
            raise AsymmetryError(f"matrix is not symmetric (max skew {skew:.3g})")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SymOp":
        return cls(scale * np.eye(dim))

    @classmethod
    def diag(cls, values) -> "SymOp":
        return cls(np.diag(np.asarray(values, dtype=float)))

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def det(self) -> float:
        return spectrum(self).det

    def __add__(self, other: "SymOp") -> "SymOp":
        return SymOp(self.entries + other.entries)

    def __sub__(self, other: "SymOp") -> "SymOp":
        return SymOp(self.entries - other.entries)

    def __neg__(self) -> "SymOp":
        return SymOp(-self.entries)

    def __mul__(self, scalar: float) -> "SymOp":
        return SymOp(float(scalar) * self.entries)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SymOp):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(np.all(self.entries == other.entries))

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __repr__(self):
        return f"SymOp(dim={self.dim}, entries={self.entries.tolist()})"

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: tuple[float, ...]
    dim: int

    def __post_init__(self):
        if len(self.eigenvalues) != self.dim:
            raise ValueError("eigenvalue count does not match dim")
        if any(b < a for a, b in zip(self.eigenvalues, self.eigenvalues[1:])):
            raise ValueError("eigenvalues must be sorted ascending")

    @property
    def min(self) -> float:
        return self.eigenvalues[0]

    @property
    def max(self) -> float:
        return self.eigenvalues[-1]

    @property
    def trace(self) -> float:
        return math.fsum(self.eigenvalues)

    @property
    def det(self) -> float:
        return math.prod(self.eigenvalues)


class Definiteness(str, Enum):
    PSD = "PSD"
    NSD = "NSD"
    INDEFINITE = "indefinite"
    ZERO = "zero"


def symmetrize(a) -> SymOp:
    """Average ``a`` with its transpose, refusing matrices that are visibly skew."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"symmetrize needs a square matrix, got shape {a.shape}")
    skew = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if skew > REPAIR_TOL:
        raise AsymmetryError(f"skew part {skew:.3g} exceeds repair threshold {REPAIR_TOL:g}")
    return SymOp(0.5 * (a + a.T))


def jacobi_eigh(a) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigen-decomposition of a real symmetric matrix.

    Returns ``(values, vectors)`` with values ascending and the columns of
    ``vectors`` orthonormal eigenvectors.
    """
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    # absolute stop at 1e-14, relaxed to the matrix scale for large entries
    stop = OFFDIAG_TOL * max(1.0, float(np.linalg.norm(a)))
    for _ in range(MAX_SWEEPS):
        off = float(np.linalg.norm(a - np.diag(np.diag(a))))
        if off < stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    # rotation angle underflows; the entry is negligible
                    a[p, q] = a[q, p] = 0.0
                    continue
                tau = diff / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return values[order], v[:, order]


def spectrum(a: SymOp) -> Spectrum:
    values, _ = jacobi_eigh(a.entries)
    return Spectrum(tuple(float(x) for x in values), a.dim)


def eigenpairs(a: SymOp) -> tuple[np.ndarray, np.ndarray]:
    return jacobi_eigh(a.entries)


def operator_norm(a: SymOp) -> float:
    s = spectrum(a)
    return max(abs(s.min), abs(s.max))


def definiteness(a: SymOp, tol: float = 1e-8) -> Definiteness:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    s = spectrum(a)
    if s.min >= -tol and s.max <= tol:
        return Definiteness.ZERO
    if s.min >= -tol:
        return Definiteness.PSD
    if s.max <= tol:
        return Definiteness.NSD
    return Definiteness.INDEFINITE


def is_psd(a: SymOp, tol: float = 1e-8) -> bool:
    return definiteness(a, tol) in (Definiteness.PSD, Definiteness.ZERO)


def is_nsd(a: SymOp, tol: float = 1e-8) -> bool:
    return definiteness(a, tol) in (Definiteness.NSD, Definiteness.ZERO)

"""Truncated Hilbert space primitives.

The state space is the Galerkin truncation of ``H = l2(I u J)`` to ``n``
coordinates.  Coordinates are labelled ``1..n`` in every external format and
stored 0-based internally.  ``I`` carries the cone coordinates (x_i >= 0) and
``J`` the unconstrained ones.

Two pairings are kept apart on purpose:

* :func:`cpair` is the bilinear extension ``sum a_k b_k`` used inside
  ``exp(<u, x>)`` and all Riccati right-hand sides;
* :func:`hermitian_inner` conjugates its second slot and is used for norms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import DomainError, NumericalError

PSD_TOL = 1e-10


@dataclass(frozen=True)
class IndexPartition:
    """Disjoint split of ``{1..n}`` into cone indices ``I`` and free indices ``J``."""

    n: int
    I: tuple[int, ...]
    J: tuple[int, ...]

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"truncation level must be a positive integer, got {self.n!r}")
        I = tuple(int(i) for i in self.I)
        J = tuple(int(j) for j in self.J)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "J", J)
        allk = I + J
        if len(set(allk)) != len(allk):
            raise DomainError("I and J overlap or contain repeated indices")
        if sorted(allk) != list(range(1, self.n + 1)):
            raise DomainError(f"I u J must equal {{1..{self.n}}}")

    @classmethod
    def from_I(cls, n: int, I: Iterable[int]) -> "IndexPartition":
        I = tuple(sorted(int(i) for i in I))
        J = tuple(k for k in range(1, n + 1) if k not in set(I))
        return cls(n, I, J)

    @property
    def nI(self) -> int:
        return len(self.I)

    @property
    def nJ(self) -> int:
        return len(self.J)

    @property
    def i_idx(self) -> np.ndarray:
        """0-based positions of ``I``."""
        return np.asarray(self.I, dtype=np.intp) - 1

    @property
    def j_idx(self) -> np.ndarray:
        """0-based positions of ``J``."""
        return np.asarray(self.J, dtype=np.intp) - 1

    def to_json(self) -> dict:
        return {"n": self.n, "I": list(self.I), "J": list(self.J)}


def _idx(K: Iterable[int], n: int) -> np.ndarray:
    k = np.asarray(list(K), dtype=np.intp)
    if k.size and (k.min() < 1 or k.max() > n):
        raise DomainError(f"index set {sorted(set(k.tolist()))} out of range 1..{n}")
    return k - 1


def project(x: np.ndarray, K: Iterable[int]) -> np.ndarray:
    """Orthogonal projection onto ``span{e_k : k in K}`` (K is 1-based)."""
    x = np.asarray(x)
    out = np.zeros_like(x)
    k = _idx(K, x.shape[-1])
    out[..., k] = x[..., k]
    return out


def block(A: np.ndarray, K: Iterable[int], L: Iterable[int]) -> np.ndarray:
    """``P_K A P_L`` as a full-size matrix (1-based index sets)."""
    A = np.asarray(A)
    k, l = _idx(K, A.shape[0]), _idx(L, A.shape[1])
    out = np.zeros_like(A)
    out[np.ix_(k, l)] = A[np.ix_(k, l)]
    return out


def _same_length(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[-1:] != b.shape[-1:]:
        raise DomainError(f"length mismatch: {a.shape[-1:]} vs {b.shape[-1:]}")
    return a, b


def cpair(a: np.ndarray, b: np.ndarray) -> complex:
    """Bilinear pairing ``sum_k a_k b_k`` (no conjugation)."""
    a, b = _same_length(a, b)
    return np.sum(a * b, axis=-1)


def hermitian_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Sesquilinear inner product ``sum_k a_k conj(b_k)``."""
    a, b = _same_length(a, b)
    return np.sum(a * np.conj(b), axis=-1)


def trace(A: np.ndarray) -> float:
    return float(np.trace(np.asarray(A)))


def in_U(u: np.ndarray, part: IndexPartition, tol: float = 0.0) -> bool:
    """Membership in ``U = {Re u_I <= 0, Re u_J = 0}``."""
    return first_U_violation(u, part, tol) is None


def first_U_violation(u: np.ndarray, part: IndexPartition, tol: float = 0.0):
    """Return ``(k, Re u_k)`` for the first offending coordinate or ``None``."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (part.n,):
        raise DomainError(f"u has shape {u.shape}, expected ({part.n},)")
    for k in part.I:
        if u[k - 1].real > tol:
            return k, float(u[k - 1].real)
    for k in part.J:
        if abs(u[k - 1].real) > tol:
            return k, float(u[k - 1].real)
    return None


def in_X(x: np.ndarray, part: IndexPartition, tol: float = 0.0) -> bool:
    """Membership in the cone ``X = H_I^+ + H_J``."""
    x = np.asarray(x, dtype=float)
    return bool(np.all(x[..., part.i_idx] >= -tol))


def _sym_eigh(A: np.ndarray):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros(0), np.zeros((0, 0))
    try:
        return np.linalg.eigh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc


def psd_check(A: np.ndarray, tol: float = PSD_TOL) -> tuple[bool, float]:
    """Return ``(is_psd, min_eig)``; symmetry is part of the test."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return True, 0.0
    scale = max(1.0, float(np.max(np.abs(A))))
    asym = float(np.max(np.abs(A - A.T)))
    w, _ = _sym_eigh(A)
    lo = float(w[0])
    return bool(asym <= tol * scale and lo >= -tol * scale), lo


def psd_sqrt(A: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric PSD square root with eigenvalue clamping at ``-tol``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros_like(A)
    scale = max(1.0, float(np.max(np.abs(A))))
    if float(np.max(np.abs(A - A.T))) > tol * scale:
        raise DomainError("psd_sqrt: matrix is not symmetric")
    w, V = _sym_eigh(A)
    if w[0] < -tol * scale:
        raise DomainError(f"psd_sqrt: matrix not PSD (min eigenvalue {w[0]:.3e})")
    w = np.sqrt(np.clip(w, 0.0, None))
    return (V * w) @ V.T


def psd_sqrt_batch(A: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Vectorised :func:`psd_sqrt` over a leading batch axis."""
    A = np.asarray(A, dtype=float)
    if A.shape[-1] == 0:
        return np.zeros_like(A)
    w, V = np.linalg.eigh(0.5 * (A + np.swapaxes(A, -1, -2)))
    scale = np.maximum(1.0, np.max(np.abs(A), axis=(-2, -1)))
    if np.any(w[..., 0] < -tol * scale):
        raise DomainError("psd_sqrt_batch: matrix not PSD")
    w = np.sqrt(np.clip(w, 0.0, None))
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def opnorm(A: np.ndarray) -> float:
    """Spectral (operator) norm; zero for empty matrices."""
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))

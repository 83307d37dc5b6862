"""State-space preserving change of coordinates ``Lambda = Id + D``.

``D`` moves the I-to-J cross covariance of the square-root coordinates into
the J block, after which ``S_bar(y)`` is block diagonal and its I block is
``diag(lambda_i y_i)``.  ``D`` maps ``H_I`` into ``H_J`` and kills ``H_J``,
so ``D @ D = 0`` and ``Lambda^-1 = Id - D`` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, DomainError
from .hilbert import psd_sqrt
from .params import AffineParams, S_op, lambda_kappa

NILPOTENT_TOL = 1e-13


@dataclass(frozen=True, eq=False)
class TransformPack:
    D: np.ndarray
    Lambda: np.ndarray
    LambdaInv: np.ndarray
    params_bar: AffineParams
    lam: np.ndarray
    kap: np.ndarray
    nu: np.ndarray

    @property
    def T(self) -> np.ndarray:
        return np.diag(self.nu)


def build_D(p: AffineParams) -> np.ndarray:
    """Column ``i`` of ``D`` is ``-pi_J S(e_i) e_i / lambda_i`` for ``lambda_i > 0``."""
    n = p.n
    I, J = p.partition.i_idx, p.partition.j_idx
    lam, _ = lambda_kappa(p)
    D = np.zeros((n, n))
    for a, i in enumerate(I):
        if lam[a] > 0.0:
            e = np.zeros(n)
            e[i] = 1.0
            col = S_op(p, e)[:, i]
            D[J, i] = -col[J] / lam[a]
    return D


def build_lambda_op(D: np.ndarray, tol: float = NILPOTENT_TOL) -> tuple[np.ndarray, np.ndarray]:
    D = np.asarray(D, dtype=float)
    r = float(np.max(np.abs(D @ D))) if D.size else 0.0
    if r > tol:
        raise ConstructionError(f"D is not nilpotent of order 2 (|D^2|_max = {r:.3e})")
    eye = np.eye(D.shape[0])
    return eye + D, eye - D


def transform_params(p: AffineParams, Lam: np.ndarray, LamInv: np.ndarray) -> AffineParams:
    """Parameters of ``Y = Lambda X``.

    ``n_bar_k = sum_l (Lambda^-1)_{lk} Lambda n_l Lambda^T`` so that
    ``N_bar(y) = Lambda N(Lambda^-1 y) Lambda^T``.
    """
    m0 = Lam @ p.m0
    M = Lam @ p.M @ LamInv
    n0 = Lam @ p.n0 @ Lam.T
    B = np.einsum("ab,lbc,dc->lad", Lam, p.nk, Lam)
    nk = np.einsum("lk,lad->kad", LamInv, B)
    return p.replace(m0=m0, M=M, n0=n0, nk=nk)


def inverse_transform_params(pbar: AffineParams, Lam: np.ndarray, LamInv: np.ndarray) -> AffineParams:
    return transform_params(pbar, LamInv, Lam)


def build_retraction(p_or_lam, rule: str = "auto", indices=None,
                     infinite: bool | None = None) -> np.ndarray:
    """Retraction weights ``nu`` over I (``T = diag(nu)``).

    ``rule``: ``"unit"`` gives ``nu = 1``; ``"sqrt-power"`` gives
    ``nu_i = max(sqrt(lambda_i), i^(-1/4))``; ``"auto"`` picks the latter
    only for parameters carrying decay rules (an infinite family) and the
    former otherwise.
    """
    if isinstance(p_or_lam, AffineParams):
        lam, _ = lambda_kappa(p_or_lam)
        indices = np.asarray(p_or_lam.partition.I)
        if infinite is None:
            infinite = p_or_lam.decay is not None
    else:
        lam = np.asarray(p_or_lam, dtype=float)
        if indices is None:
            indices = np.arange(1, lam.size + 1)
        indices = np.asarray(indices)
    if rule == "auto":
        rule = "sqrt-power" if infinite else "unit"
    if rule == "unit":
        return np.ones(lam.size)
    if rule == "sqrt-power":
        return np.maximum(np.sqrt(np.clip(lam, 0.0, None)), indices.astype(float) ** -0.25)
    raise DomainError(f"unknown retraction rule {rule!r}")


def h0_norm(nu: np.ndarray, x: np.ndarray) -> float:
    """Norm of ``x`` (given over I) in the retracted space ``H_{I,0}``."""
    return float(np.sqrt(np.sum((np.asarray(x, dtype=float) / np.asarray(nu)) ** 2)))


def build_transform(p: AffineParams, retraction: str = "auto") -> TransformPack:
    lam, kap = lambda_kappa(p)
    D = build_D(p)
    Lam, LamInv = build_lambda_op(D)
    pbar = transform_params(p, Lam, LamInv)
    return TransformPack(D, Lam, LamInv, pbar, lam, kap, build_retraction(p, retraction))


@dataclass(frozen=True)
class BlockReport:
    ij: float
    reduction: float
    diagonal: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.ij, self.reduction, self.diagonal) <= self.tol

    def to_json(self) -> dict:
        return {"ij_residual": self.ij, "reduction_residual": self.reduction,
                "diagonal_residual": self.diagonal, "tol": self.tol, "pass": self.passed}


def random_cone_points(p: AffineParams, k: int, rng: np.random.Generator) -> np.ndarray:
    y = rng.standard_normal((k, p.n))
    y[:, p.partition.i_idx] = rng.exponential(1.0, (k, p.partition.nI))
    return y


def check_block_diagonal(pbar: AffineParams, lam: np.ndarray | None = None, tol: float = 1e-12,
                         n_points: int = 100, seed: int = 0) -> BlockReport:
    """Residuals of the block-diagonal structure of ``S_bar`` on random cone points."""
    I, J = pbar.partition.i_idx, pbar.partition.j_idx
    if lam is None:
        lam, _ = lambda_kappa(pbar)
    rng = np.random.default_rng(seed)
    ys = random_cone_points(pbar, n_points, rng)
    ij = red = dg = 0.0
    for y in ys:
        S = S_op(pbar, y)
        yI = np.zeros_like(y)
        yI[I] = y[I]
        if len(I) and len(J):
            ij = max(ij, float(np.max(np.abs(S[np.ix_(I, J)]))),
                     float(np.max(np.abs(S[np.ix_(J, I)]))))
        red = max(red, float(np.max(np.abs(S - S_op(pbar, yI)))))
        if len(I):
            dg = max(dg, float(np.max(np.abs(S[np.ix_(I, I)] - np.diag(lam * y[I])))))
    return BlockReport(ij, red, dg, tol)


def sigma_bar_II_apply(pbar: AffineParams, y: np.ndarray, w: np.ndarray,
                       tol: float = 1e-12) -> np.ndarray:
    """``sqrt(lambda_i y_i) w_i`` over I.

    ``y`` is a full-length state and ``w`` holds the orthonormal ``U_0``
    coordinates over I.
    """
    lam, _ = lambda_kappa(pbar)
    yI = np.asarray(y, dtype=float)[pbar.partition.i_idx]
    if np.any(yI < -tol):
        raise DomainError("sigma_bar_II_apply: y has a negative I coordinate")
    return np.sqrt(lam * np.clip(yI, 0.0, None)) * np.asarray(w, dtype=float)


def sigma_bar_II_oracle(pbar: AffineParams, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Matrix route ``S_bar(y)_II^(1/2) Sigma_W,II^(-1/2) u`` with ``y`` full length.

    ``u`` is over I and given in ``U`` coordinates, so ``w = Sigma_W,II^(-1/2) u``
    are the matching ``U_0`` coordinates.
    """
    I = pbar.partition.i_idx
    S = S_op(pbar, y)[np.ix_(I, I)]
    sw = pbar.Sigma_W[np.ix_(I, I)]
    return psd_sqrt(S) @ np.linalg.solve(psd_sqrt(sw), np.asarray(u, dtype=float))

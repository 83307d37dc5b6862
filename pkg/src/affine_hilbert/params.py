"""Affine parameter model ``(m0, M, n0, N, Sigma_W)`` and its static checks.

Drift and diffusion are ``mu(x) = m0 + M x`` and ``S(x) = n0 + sum_k x_k n_k``.
The constructor only checks shapes and finiteness.  Admissibility, the
inward/parallel boundary conditions and the existence/uniqueness side
conditions are reported as findings by the ``check_*`` functions, so an
inadmissible parameter set can still be built, inspected and mutated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .decay import FAIL, PASS, TRUNC, SequenceRule, TailDecay, certify_sum, certify_sup
from .errors import ConstructionError, DomainError
from .hilbert import IndexPartition, opnorm, psd_check

DEFAULT_TOL = 1e-10


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AffineParams:
    """Truncated affine parameters on ``H_I^+ + H_J``.

    ``nk[k - 1]`` holds ``n_k = N e_k``.  ``sigma_w`` is an optional full
    covariance for ``W``; when absent, ``Sigma_W = diag(sigma_w_diag)``.
    """

    partition: IndexPartition
    m0: np.ndarray
    M: np.ndarray
    n0: np.ndarray
    nk: np.ndarray
    sigma_w_diag: np.ndarray
    decay: TailDecay | None = None
    sigma_w: np.ndarray | None = None

    def __post_init__(self):
        n = self.partition.n
        shapes = {"m0": (n,), "M": (n, n), "n0": (n, n), "nk": (n, n, n),
                  "sigma_w_diag": (n,)}
        for name, shape in shapes.items():
            try:
                arr = _ro(getattr(self, name))
            except (TypeError, ValueError) as exc:
                raise ConstructionError(f"{name}: {exc}") from exc
            if arr.shape != shape:
                raise ConstructionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ConstructionError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        if self.sigma_w is not None:
            sw = _ro(self.sigma_w)
            if sw.shape != (n, n) or not np.all(np.isfinite(sw)):
                raise ConstructionError("sigma_w must be a finite (n, n) matrix")
            object.__setattr__(self, "sigma_w", sw)

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def Sigma_W(self) -> np.ndarray:
        if self.sigma_w is not None:
            return np.array(self.sigma_w)
        return np.diag(self.sigma_w_diag)

    def replace(self, **changes) -> "AffineParams":
        return replace(self, **changes)

    def with_entry(self, name: str, index, value: float) -> "AffineParams":
        """Copy with a single array entry overwritten (used by mutation tests)."""
        arr = np.array(getattr(self, name))
        arr[index] = value
        return replace(self, **{name: arr})

    # JSON ---------------------------------------------------------------
    def to_json(self) -> dict:
        nk = [None if not np.any(m) else m.tolist() for m in self.nk]
        out = {
            **self.partition.to_json(),
            "m0": self.m0.tolist(),
            "M": self.M.tolist(),
            "n0": self.n0.tolist(),
            "nk": nk,
            "sigma_w_diag": self.sigma_w_diag.tolist(),
        }
        if self.decay is not None:
            out["decay"] = self.decay.to_json()
        if self.sigma_w is not None:
            out["sigma_w"] = self.sigma_w.tolist()
        return out

    @classmethod
    def from_json(cls, d: dict) -> "AffineParams":
        try:
            n = int(d["n"])
            part = IndexPartition(n, tuple(d["I"]), tuple(d["J"]))
            nk_raw = d["nk"]
            if len(nk_raw) != n:
                raise ConstructionError(f"nk has {len(nk_raw)} entries, expected {n}")
            nk = np.zeros((n, n, n))
            for k, m in enumerate(nk_raw):
                if m is not None:
                    nk[k] = np.asarray(m, dtype=float)
            return cls(
                partition=part,
                m0=d["m0"],
                M=d["M"],
                n0=d["n0"],
                nk=nk,
                sigma_w_diag=d["sigma_w_diag"],
                decay=TailDecay.from_json(d.get("decay")),
                sigma_w=d.get("sigma_w"),
            )
        except KeyError as exc:
            raise ConstructionError(f"missing parameter key {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, (ConstructionError, DomainError)):
                raise
            raise ConstructionError(f"malformed parameter file: {exc}") from exc


def mu(p: AffineParams, x: np.ndarray) -> np.ndarray:
    """Drift ``m0 + M x``."""
    return p.m0 + p.M @ np.asarray(x, dtype=float)


def S_op(p: AffineParams, x: np.ndarray) -> np.ndarray:
    """Dispersion ``n0 + sum_k x_k n_k``."""
    return p.n0 + np.tensordot(np.asarray(x, dtype=float), p.nk, axes=1)


# Findings -----------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    condition: str
    status: str
    residual: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        """Truncation-only findings are not failures."""
        return self.status != FAIL

    def to_json(self) -> dict:
        return {"condition": self.condition, "status": self.status,
                "residual": self.residual, "detail": self.detail}


@dataclass(frozen=True)
class AdmissibilityReport:
    name: str
    findings: tuple[Finding, ...] = field(default_factory=tuple)

    @property
    def overall(self) -> bool:
        return all(f.passed for f in self.findings)

    def __getitem__(self, condition: str) -> Finding:
        for f in self.findings:
            if f.condition == condition:
                return f
        raise KeyError(condition)

    @property
    def failed(self) -> set[str]:
        return {f.condition for f in self.findings if not f.passed}

    def to_json(self) -> dict:
        return {"check": self.name, "overall": self.overall,
                "findings": [f.to_json() for f in self.findings]}


def _bound(condition: str, violation: float, tol: float, detail: str = "") -> Finding:
    """Finding for a condition expressed as ``violation <= tol``."""
    v = float(max(violation, 0.0))
    return Finding(condition, PASS if v <= tol else FAIL, v, detail)


def _cert_finding(condition: str, cert) -> Finding:
    return Finding(condition, cert.status, cert.truncated, cert.detail)


def _max0(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.max(a)) if a.size else 0.0


def _psd_violation(A: np.ndarray, tol: float) -> float:
    """Violation measure: asymmetry plus negative eigenvalue mass beyond zero."""
    if A.size == 0:
        return 0.0
    ok, lo = psd_check(A, tol)
    asym = float(np.max(np.abs(A - A.T)))
    if ok:
        return 0.0
    return max(asym, -lo, tol * 1.0000001 + 1e-300)


def _norm_rule(decay: TailDecay | None) -> SequenceRule | None:
    """Rule bounding ``||n_i||`` by ``lambda_i (1 + sup kappa/lambda)``."""
    if decay is None or decay.lambda_rule is None:
        return None
    if decay.kappa_rule is None:
        return decay.lambda_rule.abs()
    ratio = decay.kappa_rule / decay.lambda_rule
    sup = ratio.tail_sup(0)
    if sup is None:
        return None
    return decay.lambda_rule.abs() * (1.0 + sup)


def check_admissibility(p: AffineParams, tol: float = DEFAULT_TOL) -> AdmissibilityReport:
    """Finding per admissibility condition of the Riccati existence result."""
    I, J = p.partition.i_idx, p.partition.j_idx
    M, n0, nk = p.M, p.n0, p.nk
    out = []

    out.append(_bound("m0_in_X", -_min_or0(p.m0[I]), tol, "m0_I >= 0"))
    off = M[np.ix_(I, I)].copy()
    np.fill_diagonal(off, 0.0)
    out.append(_bound("m_i_offdiag_nonneg", -_min_or0(off), tol,
                      "M_ki >= 0 for distinct k, i in I"))
    out.append(_bound("m_j_in_HJ", _max0(np.abs(M[np.ix_(I, J)])), tol, "M_IJ = 0"))

    rho = p.decay.rho_rule if p.decay is not None else None
    cert = certify_sup(np.abs(np.diag(M)), rho, indices=np.arange(1, p.n + 1))
    out.append(Finding("M_row_sum_bound", cert.status, opnorm(M),
                       f"||M||_op = {opnorm(M):.6g}; {cert.detail}"))

    worst = 0.0
    worst_k = None
    for k in range(p.n):
        v = _psd_violation(nk[k], tol)
        if v > worst:
            worst, worst_k = v, k + 1
    out.append(_bound("n_k_psd", worst, tol,
                      "every n_k symmetric PSD" if worst_k is None else f"n_{worst_k} not PSD"))
    out.append(_bound("n_j_zero", _max0(np.abs(nk[J])), tol, "n_j = 0 for j in J"))
    out.append(_bound("n0_II_zero", _max0(np.abs(n0[np.ix_(I, I)])), tol, "n0_II = 0"))
    out.append(_bound("n0_IJ_zero",
                      max(_max0(np.abs(n0[np.ix_(I, J)])), _max0(np.abs(n0[np.ix_(J, I)]))),
                      tol, "n0_IJ = n0_JI^T = 0"))
    out.append(_bound("n0_JJ_psd", _psd_violation(n0[np.ix_(J, J)], tol), tol, "n0_JJ PSD"))

    diag_v = 0.0
    sym_v = 0.0
    jj_v = 0.0
    for i in I:
        B = nk[i][np.ix_(I, I)].copy()
        d = B[list(I).index(i), list(I).index(i)]
        B[list(I).index(i), list(I).index(i)] = 0.0
        diag_v = max(diag_v, _max0(np.abs(B)), -d)
        sym_v = max(sym_v, _max0(np.abs(nk[i][np.ix_(I, J)] - nk[i][np.ix_(J, I)].T)))
        jj_v = max(jj_v, _psd_violation(nk[i][np.ix_(J, J)], tol))
    out.append(_bound("n_i_II_diag", diag_v, tol,
                      "n_i on I x I vanishes except a nonnegative (i,i) entry"))
    out.append(_bound("n_i_IJ_sym", sym_v, tol, "n_i,IJ = n_i,JI^T"))
    out.append(_bound("n_i_JJ_psd", jj_v, tol, "n_i,JJ PSD"))

    norms = np.array([opnorm(nk[i]) for i in I])
    cert = certify_sum(norms ** 2, None if (r := _norm_rule(p.decay)) is None else r ** 2,
                       indices=np.asarray(p.partition.I))
    out.append(_cert_finding("n_i_norm_sq_sum", cert))
    return AdmissibilityReport("admissibility", tuple(out))


def _min_or0(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.min(a)) if a.size else 0.0


def check_inward(p: AffineParams, tol: float = DEFAULT_TOL) -> AdmissibilityReport:
    """Inward-pointing drift at the boundary of the cone."""
    I, J = p.partition.i_idx, p.partition.j_idx
    off = p.M[np.ix_(I, I)].copy()
    np.fill_diagonal(off, 0.0)
    return AdmissibilityReport("inward", (
        _bound("m0_in_X", -_min_or0(p.m0[I]), tol, "m0_I >= 0"),
        _bound("M_offdiag_I_nonneg", -_min_or0(off), tol, "M_ki >= 0 for distinct k, i in I"),
        _bound("M_IJ_zero", _max0(np.abs(p.M[np.ix_(I, J)])), tol, "M(H_J) in H_J"),
    ))


def check_parallel(p: AffineParams, tol: float = DEFAULT_TOL) -> AdmissibilityReport:
    """Volatility parallel to the boundary of the cone."""
    I, J = p.partition.i_idx, p.partition.j_idx
    worst = 0.0
    for i in I:
        others = [j for j in I if j != i]
        if others:
            worst = max(worst, _max0(np.abs(p.nk[i][:, others])))
    return AdmissibilityReport("parallel", (
        _bound("n0_annihilates_HI", _max0(np.abs(p.n0[:, I])), tol, "n0 xi = 0 for xi in H_I"),
        _bound("N_zero_on_HJ", _max0(np.abs(p.nk[J])), tol, "N(x) = 0 for x in H_J"),
        _bound("n_i_ej_vanish", worst, tol, "n_i e_j = 0 for distinct i, j in I"),
    ))


def lambda_kappa(p: AffineParams) -> tuple[np.ndarray, np.ndarray]:
    """``lambda_i = ||pi_I S(e_i) e_i||`` and ``kappa_i = ||pi_J S(e_i) e_i||`` over I."""
    I, J = p.partition.i_idx, p.partition.j_idx
    lam = np.empty(len(I))
    kap = np.empty(len(I))
    for a, i in enumerate(I):
        col = p.n0[:, i] + p.nk[i][:, i]
        lam[a] = np.linalg.norm(col[I])
        kap[a] = np.linalg.norm(col[J])
    return lam, kap


def lambda_diagonal(p: AffineParams) -> np.ndarray:
    """``<S(e_i) e_i, e_i>`` over I; agrees with the norm formula under parallelism."""
    I = p.partition.i_idx
    return np.array([p.n0[i, i] + p.nk[i][i, i] for i in I])


def inv_nu_rule(decay: TailDecay | None) -> SequenceRule | None:
    """Rule bounding ``1 / nu_i`` (default weights satisfy ``nu_i >= i^(-1/4)``)."""
    if decay is None:
        return None
    if decay.nu_rule is not None:
        return SequenceRule(1.0, 0.0, 1.0) / decay.nu_rule
    return SequenceRule.power_law(1.0, -0.25)


def check_existence_side_conditions(p: AffineParams, nu: np.ndarray,
                                    tol: float = DEFAULT_TOL) -> AdmissibilityReport:
    """Side conditions for existence via the retraction ``T = diag(nu)`` on ``H_I``.

    ``nu`` is the array of retraction weights over I (see
    :func:`affine_hilbert.transform.build_retraction`).
    """
    I = p.partition.i_idx
    labels = np.asarray(p.partition.I)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (len(I),):
        raise DomainError(f"nu has shape {nu.shape}, expected ({len(I)},)")
    lam, kap = lambda_kappa(p)
    out = []

    pos = lam > 0
    bad_zero = np.any((~pos) & (kap > tol))
    ratio = np.where(pos, kap / np.where(pos, lam, 1.0), 0.0)
    rule = None
    d = p.decay
    if d is not None and d.lambda_rule is not None:
        rule = (d.kappa_rule / d.lambda_rule) ** 2 if d.kappa_rule is not None else SequenceRule(0.0)
    cert = certify_sum(ratio ** 2, rule, indices=labels)
    if bad_zero:
        out.append(Finding("kappa_over_lambda_l2", FAIL, math.inf,
                           "kappa_i > 0 where lambda_i = 0"))
    else:
        out.append(_cert_finding("kappa_over_lambda_l2", cert))

    m0I = p.m0[I]
    neg = -_min_or0(m0I)
    r = None
    if d is not None and d.m0_rule is not None and (inv := inv_nu_rule(d)) is not None:
        r = (d.m0_rule * inv) ** 2
    cert = certify_sum((m0I / nu) ** 2, r, indices=labels)
    if neg > tol:
        out.append(Finding("m0_in_HI0", FAIL, neg, "m0_I has a negative coordinate"))
    else:
        out.append(_cert_finding("m0_in_HI0", cert))

    MII = p.M[np.ix_(I, I)]
    T = np.diag(nu)
    out.append(_bound("M_II_commutes_T", _max0(np.abs(MII @ T - T @ MII)), tol,
                      "M_II T = T M_II"))

    rows = np.linalg.norm(MII, axis=1) if len(I) else np.zeros(0)
    rr = d.rho_rule.abs() if d is not None and d.rho_rule is not None else None
    cert = certify_sum(rows, rr, indices=labels)
    out.append(_cert_finding("M_II_row_norm_sum", cert))
    return AdmissibilityReport("existence", tuple(out))


def check_uniqueness_conditions(p: AffineParams, tol: float = DEFAULT_TOL) -> AdmissibilityReport:
    """Pathwise-uniqueness hypotheses for the square-root diffusion on ``I``."""
    I = p.partition.i_idx
    labels = np.asarray(p.partition.I)
    out = []

    Sw = p.Sigma_W
    offd = Sw - np.diag(np.diag(Sw))
    v = _max0(np.abs(offd))
    if np.any(np.diag(Sw) <= 0):
        out.append(Finding("sigma_w_diagonal", FAIL, float(-np.min(np.diag(Sw))),
                           "Sigma_W has a non-positive diagonal entry"))
    else:
        out.append(_bound("sigma_w_diagonal", v, tol, "Sigma_W diagonal with positive entries"))

    # Lipschitz constant of mu_i is the Euclidean norm of row i of M_II
    rows = np.linalg.norm(p.M[np.ix_(I, I)], axis=1) if len(I) else np.zeros(0)
    rr = p.decay.rho_rule.abs() if p.decay is not None and p.decay.rho_rule is not None else None
    out.append(_cert_finding("drift_lipschitz_l1", certify_sum(rows, rr, indices=labels)))

    par = check_parallel(p, tol)
    out.append(Finding("diagonal_volatility", PASS if par.overall else FAIL,
                       max(f.residual for f in par.findings),
                       "delegated to the parallel-volatility check"))

    lam, _ = lambda_kappa(p)
    if np.any(lam < 0):
        out.append(Finding("holder_modulus", FAIL, float(-lam.min()), "negative lambda"))
    else:
        c = math.sqrt(_max0(lam))
        # |sqrt(l x) - sqrt(l y)| <= sqrt(l) sqrt|x - y|; check on a grid as well
        g = np.linspace(0.0, 4.0, 81)
        X, Y = np.meshgrid(g, g)
        viol = 0.0
        for li in np.unique(lam):
            lhs = np.abs(np.sqrt(li * X) - np.sqrt(li * Y))
            viol = max(viol, float(np.max(lhs - c * np.sqrt(np.abs(X - Y)))))
        out.append(Finding("holder_modulus", PASS if viol <= 1e-12 else FAIL, max(viol, 0.0),
                           f"rho(u) = {c:.6g} sqrt(u); integral of du/rho(u)^2 diverges at 0"))
    return AdmissibilityReport("uniqueness", tuple(out))


def check_all(p: AffineParams, nu: np.ndarray | None = None,
              tol: float = DEFAULT_TOL) -> dict[str, AdmissibilityReport]:
    """Run every static checker; ``nu`` defaults to the standard retraction."""
    if nu is None:
        from .transform import build_retraction
        nu = build_retraction(p)
    return {
        "admissibility": check_admissibility(p, tol),
        "inward": check_inward(p, tol),
        "parallel": check_parallel(p, tol),
        "existence": check_existence_side_conditions(p, nu, tol),
        "uniqueness": check_uniqueness_conditions(p, tol),
    }

"""Generalized Riccati system for the affine transform formula.

``E[exp(<u, X_t>)] = exp(phi(t, u) + <psi(t, u), x>)`` with

    psi_k' = <m_k, psi> + 1/2 <n_k psi, psi>,   psi(0) = u
    phi'   = <m0, psi>  + 1/2 <n0 psi, psi>,    phi(0) = 0

where ``<a, b>`` is the bilinear pairing.  Under admissibility the J block
decouples and is linear, ``psi_J(t) = expm(t M_JJ^T) u_J``, so by default
only ``psi_I`` goes through the integrator.  Every accepted step carries
certificates: the solution stays in ``C_- x U`` and ``||psi_I||^2`` stays
below the Gronwall bound.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import RK45, cumulative_simpson, simpson
from scipy.linalg import expm

from .errors import DomainError, SolverDivergenceError, StiffnessError
from .hilbert import cpair, first_U_violation, hermitian_inner, opnorm
from .io import write_csv
from .params import AffineParams

CERT_COLUMNS = ("cert_re_phi", "cert_max_re_psi_I", "cert_max_abs_re_psi_J",
                "cert_norm_psi_I_sq", "cert_gronwall_bound")


@dataclass(frozen=True)
class SolverOpts:
    """Integrator settings.

    ``method`` is ``"rk45"`` (adaptive Dormand-Prince) or ``"rk4"`` (fixed
    step ``dt``).  ``j_mode="full"`` integrates ``psi_J`` too, as a cross
    check of the closed form.  With ``strict=False`` certificate breaches
    are warnings instead of errors.
    """

    method: str = "rk45"
    dt: float = 1e-3
    atol: float = 1e-9
    rtol: float = 1e-9
    cert_tol: float = 1e-8
    gronwall_tol: float = 1e-6
    strict: bool = True
    j_mode: str = "closed"
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise DomainError(f"unknown method {self.method!r}")
        if self.j_mode not in ("closed", "full"):
            raise DomainError(f"unknown j_mode {self.j_mode!r}")
        if not (self.dt > 0 and self.atol > 0 and self.rtol > 0 and self.cert_tol >= 0):
            raise DomainError("step size and tolerances must be positive")


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    grid: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    certificates: np.ndarray  # (len(grid), 5) in CERT_COLUMNS order
    violations: tuple = field(default_factory=tuple)

    @property
    def phi_end(self) -> complex:
        return complex(self.phi[-1])

    @property
    def psi_end(self) -> np.ndarray:
        return self.psi[-1]

    def transform(self, x: np.ndarray) -> complex:
        """``exp(phi(t_end) + <psi(t_end), x>)``."""
        return complex(np.exp(self.phi_end + cpair(self.psi_end, np.asarray(x, dtype=float))))

    def csv_header(self) -> list[str]:
        n = self.psi.shape[1]
        cols = ["t", "re_phi", "im_phi"]
        for k in range(1, n + 1):
            cols += [f"re_psi_{k}", f"im_psi_{k}"]
        return cols + list(CERT_COLUMNS)

    def csv_rows(self):
        for m, t in enumerate(self.grid):
            row = [float(t), float(self.phi[m].real), float(self.phi[m].imag)]
            for z in self.psi[m]:
                row += [float(z.real), float(z.imag)]
            yield row + [float(c) for c in self.certificates[m]]

    def to_csv(self, target) -> None:
        write_csv(target, self.csv_header(), self.csv_rows())


# Vector fields -------------------------------------------------------------

def rhs_psi(p: AffineParams, psi: np.ndarray) -> np.ndarray:
    """Coordinate ``k``: ``<m_k, psi> + 1/2 <n_k psi, psi>`` (bilinear pairing)."""
    psi = np.asarray(psi, dtype=complex)
    out = np.empty(p.n, dtype=complex)
    for k in range(p.n):
        out[k] = cpair(p.M[:, k], psi) + 0.5 * cpair(p.nk[k] @ psi, psi)
    return out


def semilinear_rhs(p: AffineParams, psi: np.ndarray) -> np.ndarray:
    """``M^T psi + f(psi)`` with ``f(xi) = 1/2 sum_{i in I} <n_i xi, conj(xi)>_H e_i``."""
    psi = np.asarray(psi, dtype=complex)
    f = np.zeros(p.n, dtype=complex)
    for i in p.partition.i_idx:
        f[i] = 0.5 * hermitian_inner(p.nk[i] @ psi, np.conj(psi))
    return p.M.T @ psi + f


def rhs_phi(p: AffineParams, psi: np.ndarray) -> complex:
    psi = np.asarray(psi, dtype=complex)
    return complex(cpair(p.m0, psi) + 0.5 * cpair(p.n0 @ psi, psi))


def psi_J_closed(p: AffineParams, uJ: np.ndarray, t: float) -> np.ndarray:
    """``expm(t M_JJ^T) u_J``; ``uJ`` is full length and supported on J."""
    J = p.partition.j_idx
    uJ = np.asarray(uJ, dtype=complex)
    out = np.zeros(p.n, dtype=complex)
    if len(J):
        E = expm(t * p.M[np.ix_(J, J)].T)
        out[J] = E @ uJ[J]
    return out


class _JPropagator:
    """``t -> expm(t M_JJ^T) u_J`` with a diagonal fast path."""

    def __init__(self, p: AffineParams, u: np.ndarray):
        J = p.partition.j_idx
        self.A = p.M[np.ix_(J, J)].T
        self.uJ = np.asarray(u, dtype=complex)[J]
        self.diag = np.count_nonzero(self.A - np.diag(np.diag(self.A))) == 0
        self.d = np.diag(self.A).copy()

    def __call__(self, t: float) -> np.ndarray:
        if self.uJ.size == 0:
            return self.uJ
        if self.diag:
            return np.exp(self.d * t) * self.uJ
        return expm(t * self.A) @ self.uJ


def gronwall_constant(p: AffineParams) -> float:
    """``C = sum_{i in I} ||n_i||^2 + ||M||^2 + 7/2`` (spectral norms)."""
    s = sum(opnorm(p.nk[i]) ** 2 for i in p.partition.i_idx)
    return float(s + opnorm(p.M) ** 2 + 3.5)


def _h(psiJ_norm2):
    return 1.0 + psiJ_norm2 + psiJ_norm2 ** 2


def gronwall_bound(p: AffineParams, u: np.ndarray, t: float, quad_steps: int = 200) -> float:
    """Gronwall bound on ``||psi_I(t, u)||^2`` by composite Simpson quadrature.

    ``||u_I||^2 + C (1 + ||u_I||^2) int_0^t h(s) exp(C int_s^t h) ds`` with
    ``h = 1 + ||psi_J||^2 + ||psi_J||^4``.
    """
    u = np.asarray(u, dtype=complex)
    I = p.partition.i_idx
    a = float(np.sum(np.abs(u[I]) ** 2))
    if t <= 0:
        return a
    if quad_steps % 2:
        quad_steps += 1
    C = gronwall_constant(p)
    prop = _JPropagator(p, u)
    s = np.linspace(0.0, t, quad_steps + 1)
    h = np.array([_h(float(np.sum(np.abs(prop(si)) ** 2))) for si in s])
    H = cumulative_simpson(h, x=s, initial=0.0)
    outer = simpson(h * np.exp(C * (H[-1] - H)), x=s)
    return float(a + C * (1.0 + a) * outer)


def scalar_riccati(u0: float, C: float, t: float) -> float:
    """Solution of ``g' = C (g^2 - 2 g)``, ``g(0) = u0 <= 0``."""
    if u0 > 0 or C < 0:
        raise DomainError("scalar_riccati needs u0 <= 0 and C >= 0")
    E = math.exp(2.0 * C * t)
    return 2.0 * u0 / (2.0 * E - u0 * (E - 1.0))


# Solver ----------------------------------------------------------------------

class _System:
    """Packed state ``z = [psi_I or psi, phi, H]`` with ``H' = h(||psi_J||^2)``."""

    def __init__(self, p: AffineParams, u: np.ndarray, full: bool):
        self.p = p
        self.full = full
        self.I = p.partition.i_idx
        self.J = p.partition.j_idx
        self.n = p.n
        self.prop = _JPropagator(p, u)
        self.MT = p.M.T.copy()
        self.MT_I = self.MT[self.I] if not full else None
        self.nk = p.nk
        self.nI_mats = p.nk[self.I]
        self.m0 = p.m0
        self.n0 = p.n0

    def unpack(self, t, z) -> np.ndarray:
        if self.full:
            return z[: self.n]
        psi = np.empty(self.n, dtype=complex)
        psi[self.I] = z[: len(self.I)]
        psi[self.J] = self.prop(t)
        return psi

    def __call__(self, t, z):
        psi = self.unpack(t, z)
        if self.full:
            quad = 0.5 * np.einsum("kab,a,b->k", self.nk, psi, psi)
            dpsi = self.MT @ psi + quad
        else:
            quad = 0.5 * np.einsum("kab,a,b->k", self.nI_mats, psi, psi)
            dpsi = self.MT_I @ psi + quad
        dphi = self.m0 @ psi + 0.5 * (psi @ (self.n0 @ psi))
        nj2 = float(np.sum(np.abs(psi[self.J]) ** 2))
        out = np.empty(z.size, dtype=complex)
        out[:-2] = dpsi
        out[-2] = dphi
        out[-1] = _h(nj2)
        return out


def _rk4(f, z0, t_end, dt, max_steps):
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    if n_steps > max_steps:
        raise StiffnessError(f"rk4 would need {n_steps} steps (> max_steps)")
    h = t_end / n_steps
    ts = np.linspace(0.0, t_end, n_steps + 1)
    zs = np.empty((n_steps + 1, z0.size), dtype=complex)
    zs[0] = z0
    z = z0
    for m in range(n_steps):
        t = ts[m]
        k1 = f(t, z)
        k2 = f(t + 0.5 * h, z + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, z + 0.5 * h * k2)
        k4 = f(t + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        zs[m + 1] = z
    return ts, zs


def _rk45(f, z0, t_end, opts):
    solver = RK45(f, 0.0, z0, t_end, rtol=opts.rtol, atol=opts.atol)
    ts = [0.0]
    zs = [z0.copy()]
    steps = 0
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise StiffnessError(f"adaptive step failed at t = {solver.t:.6g}: {msg}")
        steps += 1
        if steps > opts.max_steps:
            raise StiffnessError(f"exceeded {opts.max_steps} steps at t = {solver.t:.6g}")
        ts.append(solver.t)
        zs.append(solver.y.copy())
    return np.array(ts), np.array(zs)


def solve_riccati(p: AffineParams, u: np.ndarray, t_end: float,
                  opts: SolverOpts | None = None) -> RiccatiSolution:
    """Integrate ``(phi, psi)`` on ``[0, t_end]`` with per-step certificates."""
    opts = opts or SolverOpts()
    u = np.asarray(u, dtype=complex)
    bad = first_U_violation(u, p.partition, opts.cert_tol)
    if bad is not None:
        raise DomainError(f"u not in U: coordinate {bad[0]} has real part {bad[1]:.6g}")
    if not (t_end >= 0 and math.isfinite(t_end)):
        raise DomainError("t_end must be finite and non-negative")
    full = opts.j_mode == "full"
    sys_ = _System(p, u, full)
    head = u.copy() if full else u[sys_.I].copy()
    z0 = np.concatenate([head, [0.0, 0.0]]).astype(complex)
    if t_end == 0:
        ts, zs = np.array([0.0]), z0[None, :]
    elif opts.method == "rk4":
        ts, zs = _rk4(sys_, z0, t_end, opts.dt, opts.max_steps)
    else:
        ts, zs = _rk45(sys_, z0, t_end, opts)

    psi = np.array([sys_.unpack(t, z) for t, z in zip(ts, zs)])
    psi[0] = u
    phi = zs[:, -2].copy()
    phi[0] = 0.0
    Hs = zs[:, -1].real
    certs = _certificates(p, u, psi, phi, Hs)
    violations = _check_certs(ts, certs, opts)
    if violations:
        t0, which, resid = violations[0]
        msg = f"certificate {which} violated at t = {t0:.6g} (residual {resid:.3e})"
        if opts.strict:
            raise SolverDivergenceError(msg, time=t0, residual=resid, certificate=which)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return RiccatiSolution(ts, phi, psi, u, certs, tuple(violations))


def _certificates(p, u, psi, phi, Hs) -> np.ndarray:
    I, J = p.partition.i_idx, p.partition.j_idx
    C = gronwall_constant(p)
    a = float(np.sum(np.abs(u[I]) ** 2))
    m = len(phi)
    out = np.zeros((m, 5))
    out[:, 0] = phi.real
    out[:, 1] = psi[:, I].real.max(axis=1) if len(I) else -np.inf
    out[:, 2] = np.abs(psi[:, J].real).max(axis=1) if len(J) else 0.0
    out[:, 3] = np.sum(np.abs(psi[:, I]) ** 2, axis=1)
    with np.errstate(over="ignore"):
        # inner double integral collapses to (exp(C H) - 1) / C
        out[:, 4] = a + (1.0 + a) * np.expm1(C * Hs)
    return out


def _check_certs(ts, certs, opts):
    tol = opts.cert_tol
    checks = (
        ("re_phi", certs[:, 0] - tol),
        ("re_psi_I", certs[:, 1] - tol),
        ("abs_re_psi_J", certs[:, 2] - tol),
        ("gronwall", certs[:, 3] - certs[:, 4] - opts.gronwall_tol),
    )
    found = []
    for name, excess in checks:
        bad = np.flatnonzero(~(excess <= 0))
        if bad.size:
            k = bad[0]
            found.append((float(ts[k]), name, float(excess[k])))
    found.sort()
    return found


def semiflow_check(p: AffineParams, u: np.ndarray, s: float, t: float,
                   opts: SolverOpts | None = None) -> dict:
    """Residuals of ``psi(s+t, u) = psi(s, psi(t, u))`` and the matching phi identity."""
    a = solve_riccati(p, u, s + t, opts)
    b = solve_riccati(p, u, t, opts)
    c = solve_riccati(p, b.psi_end, s, opts)
    return {
        "psi_residual": float(np.linalg.norm(a.psi_end - c.psi_end)),
        "phi_residual": float(abs(a.phi_end - b.phi_end - c.phi_end)),
    }

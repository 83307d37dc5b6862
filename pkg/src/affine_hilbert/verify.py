"""Monte Carlo checks of the law-level identities.

Each test compares a sample mean against an analytic value built from
Riccati solves.  A record passes when

    |mc - analytic| <= z_crit * stderr + allowance + ROUNDOFF

where ``stderr`` is the Euclidean standard error of the (Re, Im) pair and
``allowance`` is the discretisation bias estimated from a Richardson pair:
the same Brownian paths simulated at ``dt`` and ``2 dt``.  ``ROUNDOFF``
only matters for deterministic records (zero stderr).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .errors import DomainError
from .hilbert import cpair, first_U_violation, opnorm
from .io import write_csv
from .params import AffineParams
from .riccati import SolverOpts, solve_riccati
from .simulate import PathEnsemble, SimConfig, ou_moments, simulate_paths

MIN_POWER_PATHS = 1000
BOUND_TOL = 1e-12
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class VerificationRecord:
    label: str
    u: tuple
    mc: complex
    stderr: float
    analytic: complex
    z: float
    allowance: float
    passed: bool

    @property
    def gap(self) -> float:
        return abs(self.mc - self.analytic)

    def to_json(self) -> dict:
        c = lambda z: {"re": z.real, "im": z.imag}
        return {"label": self.label, "u": [c(complex(x)) for x in self.u],
                "mc_estimate": c(self.mc), "mc_stderr": self.stderr,
                "analytic": c(self.analytic), "gap": self.gap, "z_score": self.z,
                "allowance": self.allowance, "pass": self.passed}


@dataclass
class VerificationReport:
    test: str
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records) and all(self.checks.values())

    def to_json(self) -> dict:
        return {"test": self.test, "records": [r.to_json() for r in self.records],
                "pass": self.passed, "config": self.config, "metrics": self.metrics,
                "checks": self.checks, "warnings": self.warnings}

    def to_csv(self, target) -> None:
        header = ["test", "label", "mc_re", "mc_im", "stderr", "analytic_re", "analytic_im",
                  "gap", "z_score", "allowance", "pass"]
        rows = ([self.test, r.label, r.mc.real, r.mc.imag, r.stderr, r.analytic.real,
                 r.analytic.imag, r.gap, r.z, r.allowance, r.passed] for r in self.records)
        write_csv(target, header, rows)


# Estimators ------------------------------------------------------------------

def _stats(values: np.ndarray) -> tuple[complex, float]:
    """Mean and Euclidean stderr of complex samples."""
    n = values.size
    if n == 0:
        raise DomainError("empty ensemble")
    mean = complex(np.mean(values))
    if n == 1:
        return mean, 0.0
    vr = float(np.var(values.real, ddof=1)) / n
    vi = float(np.var(values.imag, ddof=1)) / n
    return mean, math.sqrt(vr + vi)


def _mahalanobis(values: np.ndarray, target: complex) -> float:
    n = values.size
    d = np.array([np.mean(values.real) - target.real, np.mean(values.imag) - target.imag])
    if n < 2:
        return 0.0 if not np.any(d) else math.inf
    C = np.cov(np.vstack([values.real, values.imag])) / n
    Cp = np.linalg.pinv(C, rcond=1e-12, hermitian=True)
    # deviations orthogonal to the sample support are infinitely unlikely
    resid = d - C @ Cp @ d
    if np.linalg.norm(resid) > 1e-14 * max(1.0, np.linalg.norm(d)):
        return math.inf
    return float(math.sqrt(max(d @ Cp @ d, 0.0)))


def _states(ens_or_states) -> np.ndarray:
    X = ens_or_states.terminal if isinstance(ens_or_states, PathEnsemble) else np.asarray(ens_or_states)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DomainError("empty ensemble")
    return X


def mc_samples(X: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.exp(X @ np.asarray(u, dtype=complex))


def mc_char_fn(ensemble, u: np.ndarray) -> tuple[complex, float]:
    """Sample mean and Euclidean stderr of ``exp(<u, X_T>)``."""
    X = _states(ensemble)
    return _stats(mc_samples(X, u))


def _record(label, u, vals, vals_coarse, analytic, z_crit) -> VerificationRecord:
    mc, se = _stats(vals)
    allowance = 0.0
    if vals_coarse is not None:
        allowance = abs(mc - complex(np.mean(vals_coarse)))
    gap = abs(mc - analytic)
    z = _mahalanobis(vals, analytic)
    ok = gap <= z_crit * se + allowance + ROUNDOFF * max(1.0, abs(analytic))
    return VerificationRecord(label, tuple(complex(x) for x in np.atleast_1d(u)), mc, se,
                              complex(analytic), z, allowance, bool(ok))


def coarse_config(cfg: SimConfig) -> SimConfig | None:
    """Same Brownian path at twice the step, or ``None`` if the grid does not allow it."""
    if cfg.n_steps % 2:
        return None
    try:
        return replace(cfg, dt=2 * cfg.dt, noise_refine=2 * cfg.noise_refine)
    except DomainError:
        return None


def _pair(p, x0, cfg, richardson):
    fine = simulate_paths(p, x0, cfg)
    coarse = None
    if richardson and (cc := coarse_config(cfg)) is not None:
        coarse = simulate_paths(p, x0, cc)
    return fine, coarse


def _base_report(test, p, x0, cfg, z_crit, extra=None) -> VerificationReport:
    rep = VerificationReport(test, config={"paths": cfg.n_paths, "dt": cfg.dt, "t": cfg.t_end,
                                           "seed": cfg.master_seed, "scheme": cfg.scheme,
                                           "z_crit": z_crit, "x0": list(map(float, x0)),
                                           **(extra or {})})
    if cfg.n_paths < MIN_POWER_PATHS:
        rep.warnings.append(f"insufficient statistical power: {cfg.n_paths} paths "
                            f"(< {MIN_POWER_PATHS})")
    return rep


def _check_U(p, u):
    bad = first_U_violation(np.asarray(u, dtype=complex), p.partition)
    if bad is not None:
        raise DomainError(f"u not in U: coordinate {bad[0]} has real part {bad[1]:.6g}")


def default_u_batch(p: AffineParams, n_real: int = 5, n_imag: int = 1) -> list[np.ndarray]:
    """Log-spaced negative reals on I crossed with an imaginary grid on J."""
    I, J = p.partition.i_idx, p.partition.j_idx
    reals = -np.logspace(-1, math.log10(2.0), n_real) if len(I) else np.zeros(1)
    if len(J):
        imags = np.linspace(0.25, 1.0, n_imag) if len(I) else np.linspace(0.25, 1.5, max(n_imag, n_real))
    else:
        imags = np.zeros(1)
    out = []
    for r in reals:
        for w in imags:
            u = np.zeros(p.n, dtype=complex)
            u[I] = r
            u[J] = 1j * w
            out.append(u)
    return out


def _bound_check(rep, vals_list):
    m = max(float(np.max(np.abs(v))) for v in vals_list)
    rep.metrics["max_modulus"] = m
    rep.checks["modulus_bounded_by_one"] = m <= 1.0 + BOUND_TOL


# Tests -------------------------------------------------------------------------

def affine_identity_test(p: AffineParams, x0, t: float, u_batch, cfg: SimConfig,
                         opts: SolverOpts | None = None, z_crit: float = 4.0,
                         richardson: bool = True, analytic_params: AffineParams | None = None,
                         ensemble: tuple | None = None) -> VerificationReport:
    """``E exp(<u, X_t>)`` against ``exp(phi(t, u) + <psi(t, u), x0>)``.

    ``analytic_params`` replaces the parameters on the analytic side only
    (negative controls).  ``ensemble`` reuses a precomputed ``(fine, coarse)``.
    """
    x0 = np.asarray(x0, dtype=float)
    if abs(cfg.t_end - t) > 1e-12 * max(1.0, t):
        raise DomainError("cfg.t_end must equal t")
    for u in u_batch:
        _check_U(p, u)
    fine, coarse = ensemble if ensemble is not None else _pair(p, x0, cfg, richardson)
    pa = analytic_params or p
    rep = _base_report("affine", p, x0, cfg, z_crit)
    Xf = fine.terminal
    Xc = coarse.terminal if coarse is not None else None
    all_vals = []
    for k, u in enumerate(u_batch):
        vals = mc_samples(Xf, u)
        all_vals.append(vals)
        an = solve_riccati(pa, u, t, opts).transform(x0)
        vc = mc_samples(Xc, u) if Xc is not None else None
        rep.records.append(_record(f"u[{k}]", u, vals, vc, an, z_crit))
    _bound_check(rep, all_vals)
    return rep


def gaussian_char_fn(p: AffineParams, x0, t: float, u) -> complex:
    """``exp(<u, mean> + 1/2 u^T Cov u)`` for the pure OU case (bilinear exponent)."""
    mean, cov = ou_moments(p, x0, t)
    u = np.asarray(u, dtype=complex)
    return complex(np.exp(cpair(u, mean) + 0.5 * (u @ cov @ u)))


def martingale_test(p: AffineParams, x0, T: float, u, checkpoints, cfg: SimConfig,
                    opts: SolverOpts | None = None, z_crit: float = 4.0,
                    richardson: bool = True) -> VerificationReport:
    """``M_t = exp(phi(T-t, u) + <psi(T-t, u), X_t>)`` has constant mean."""
    x0 = np.asarray(x0, dtype=float)
    _check_U(p, u)
    cps = sorted(float(c) for c in checkpoints)
    cfg = replace(cfg, t_end=T, store="checkpoints", checkpoints=tuple(cps))
    fine, coarse = _pair(p, x0, cfg, richardson)
    M0 = solve_riccati(p, u, T, opts).transform(x0)
    rep = _base_report("martingale", p, x0, cfg, z_crit, {"T": T, "checkpoints": cps})
    rep.metrics["M0"] = {"re": M0.real, "im": M0.imag}
    all_vals = []
    for c in cps:
        if T - c > 0:
            sol = solve_riccati(p, u, T - c, opts)
            phi, psi = sol.phi_end, sol.psi_end
        else:
            phi, psi = 0.0, np.asarray(u, dtype=complex)
        vals = np.exp(phi + fine.at(c) @ psi)
        all_vals.append(vals)
        vc = np.exp(phi + coarse.at(c) @ psi) if coarse is not None else None
        rep.records.append(_record(f"t={c!r}", u, vals, vc, M0, z_crit))
    _bound_check(rep, all_vals)
    return rep


def joint_laplace_test(p: AffineParams, x0, s: float, t: float, u, v, cfg: SimConfig,
                       opts: SolverOpts | None = None, z_crit: float = 4.0,
                       richardson: bool = True) -> VerificationReport:
    """``E exp(<u, X_s> + <v, X_t>)`` against the composed Riccati formula."""
    if not 0 < s < t:
        raise DomainError("need 0 < s < t")
    x0 = np.asarray(x0, dtype=float)
    _check_U(p, u)
    _check_U(p, v)
    cfg = replace(cfg, t_end=t, store="checkpoints", checkpoints=(s, t))
    fine, coarse = _pair(p, x0, cfg, richardson)
    inner = solve_riccati(p, v, t - s, opts)
    w = np.asarray(u, dtype=complex) + inner.psi_end
    outer = solve_riccati(p, w, s, opts)
    analytic = complex(np.exp(inner.phi_end) * outer.transform(x0))
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    vals = np.exp(fine.at(s) @ u + fine.at(t) @ v)
    vc = np.exp(coarse.at(s) @ u + coarse.at(t) @ v) if coarse is not None else None
    rep = _base_report("joint", p, x0, cfg, z_crit, {"s": s, "t": t})
    rep.records.append(_record("joint", np.concatenate([u, v]), vals, vc, analytic, z_crit))
    _bound_check(rep, [vals])
    return rep


def cone_invariance_test(ensemble: PathEnsemble, p: AffineParams,
                         tol: float = 0.0) -> VerificationReport:
    """Fraction of stored states outside the cone plus pre-clamp diagnostics."""
    I = p.partition.i_idx
    rep = VerificationReport("cone", config={"paths": ensemble.config.n_paths,
                                             "dt": ensemble.config.dt,
                                             "scheme": ensemble.config.scheme})
    if len(I) == 0:
        frac = 0.0
    else:
        XI = ensemble.states[:, :, I]
        frac = float(np.count_nonzero(XI < -tol)) / XI.size
    rep.metrics.update({"violation_fraction": frac,
                        "pre_clamp_count": ensemble.n_clamped,
                        "min_pre_clamp": ensemble.min_pre_clamp})
    rep.checks["no_stored_violations"] = frac == 0.0
    return rep


def pathwise_uniqueness_test(p: AffineParams, x0, eps: float, cfg: SimConfig) -> VerificationReport:
    """Shared-noise runs from ``x0`` and ``x0 + eps e_i``.

    ``eps = 0`` requires bit-identical paths.  For ``eps > 0`` the mean
    absolute terminal gap must stay inside the Gronwall envelope
    ``exp(L t) eps`` with ``L = ||M||``; the maximum gap is reported.
    """
    if eps < 0:
        raise DomainError("eps must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    base = simulate_paths(p, x0, cfg)
    L = opnorm(p.M)
    env = math.exp(L * cfg.t_end) * eps
    rep = VerificationReport("uniqueness", config={"paths": cfg.n_paths, "dt": cfg.dt,
                                                   "t": cfg.t_end, "seed": cfg.master_seed,
                                                   "eps": eps})
    rep.metrics["envelope"] = env
    idx = p.partition.I if p.partition.nI else p.partition.J
    per = {}
    ok = True
    for i in idx:
        x1 = x0.copy()
        x1[i - 1] += eps
        other = simulate_paths(p, x1, cfg)
        gaps = np.linalg.norm(other.terminal - base.terminal, axis=1)
        entry = {"mean_gap": float(gaps.mean()), "max_gap": float(gaps.max())}
        if p.partition.nI == 0:
            e = np.zeros(p.n)
            e[i - 1] = eps
            entry["exact_gap"] = float(np.linalg.norm(expm(p.M * cfg.t_end) @ e))
            step = np.linalg.matrix_power(np.eye(p.n) + p.M * cfg.dt, cfg.n_steps) @ e
            entry["euler_gap"] = float(np.linalg.norm(step))
        if eps == 0:
            ok &= bool(np.all(other.terminal == base.terminal))
        else:
            ok &= entry["mean_gap"] <= env * (1.0 + 1e-9)
        per[str(i)] = entry
    rep.metrics["coordinates"] = per
    rep.checks["gap_within_envelope" if eps else "bit_identical"] = bool(ok)
    return rep

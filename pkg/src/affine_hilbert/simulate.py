"""Cone-preserving Euler simulation of the transformed affine SDE.

The simulation runs in ``Y = Lambda X`` coordinates where the volatility is
block diagonal: each ``Y_i`` (i in I) is a scalar square-root diffusion
driven by its own standard Brownian coordinate, and ``Y_J`` is driven by
``S_bar(Y_I)_JJ^(1/2) dbeta_J``.  Since ``Sigma_W`` is diagonal its weights
cancel in the standardised coordinates and are never sampled.

Randomness comes from one Philox stream per path keyed by
``(master_seed, path_id)``.  Paths are processed in fixed-size chunks whose
size does not depend on the thread count, so ensembles are bit-identical
under any worker schedule.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import BlowUpError, DomainError
from .hilbert import psd_sqrt, psd_sqrt_batch
from .io import write_csv
from .params import AffineParams
from .transform import TransformPack, build_transform

SCHEMES = ("full-truncation", "absorbed")
STORES = ("terminal", "full", "checkpoints")
NOISE_BUDGET = 1 << 23  # floats of pre-drawn noise per chunk
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``noise_refine = r`` draws Brownian increments on a grid ``r`` times
    finer than ``dt`` and sums them, so a run at ``(dt, r)`` and one at
    ``(2 dt, 2 r)`` share the same Brownian path (common random numbers).
    ``freeze_root_steps = k`` reuses the J-block square root for ``k`` steps.
    """

    t_end: float
    dt: float
    n_paths: int
    scheme: str = "full-truncation"
    master_seed: int = 0
    store: str = "terminal"
    checkpoints: tuple[float, ...] = ()
    noise_refine: int = 1
    threads: int = 1
    freeze_root_steps: int = 1
    first_path_id: int = 0

    def __post_init__(self):
        if not (self.t_end > 0 and self.dt > 0):
            raise DomainError("t_end and dt must be positive")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise DomainError("n_paths must be a positive integer")
        if self.scheme not in SCHEMES:
            raise DomainError(f"scheme must be one of {SCHEMES}")
        if self.store not in STORES:
            raise DomainError(f"store must be one of {STORES}")
        if self.noise_refine < 1 or self.threads < 1 or self.freeze_root_steps < 1:
            raise DomainError("noise_refine, threads and freeze_root_steps must be >= 1")
        if not 0 <= self.master_seed <= _MASK64:
            raise DomainError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "checkpoints", tuple(float(c) for c in self.checkpoints))
        self.n_steps  # validates divisibility
        for c in self.checkpoints:
            self.step_index(c)

    @property
    def n_steps(self) -> int:
        k = round(self.t_end / self.dt)
        if k < 1 or abs(k * self.dt - self.t_end) > 64 * np.finfo(float).eps * self.t_end:
            raise DomainError(f"dt = {self.dt!r} does not divide t_end = {self.t_end!r}")
        return int(k)

    def step_index(self, t: float) -> int:
        k = round(t / self.dt)
        if k < 0 or k > self.n_steps or abs(k * self.dt - t) > 64 * np.finfo(float).eps * max(t, 1.0):
            raise DomainError(f"checkpoint {t!r} is not on the dt grid")
        return int(k)

    def stored_steps(self) -> np.ndarray:
        if self.store == "full":
            return np.arange(self.n_steps + 1)
        if self.store == "terminal":
            return np.array([self.n_steps])
        return np.array(sorted({self.step_index(c) for c in self.checkpoints}), dtype=int)

    def to_json(self) -> dict:
        d = asdict(self)
        d["checkpoints"] = list(self.checkpoints)
        return d


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    config: SimConfig
    times: np.ndarray
    states: np.ndarray  # (n_paths, len(times), n), X coordinates
    path_ids: np.ndarray
    min_pre_clamp: float
    n_clamped: int
    extra: dict = field(default_factory=dict)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"time {t!r} was not stored")
        return self.states[:, k, :]

    def summary(self) -> dict:
        X = self.terminal
        return {
            "n_paths": int(X.shape[0]),
            "t_end": self.config.t_end,
            "terminal_mean": X.mean(axis=0).tolist(),
            "terminal_var": X.var(axis=0, ddof=1).tolist() if X.shape[0] > 1 else [0.0] * X.shape[1],
            "cone": {
                "min_pre_clamp": self.min_pre_clamp,
                "n_clamped": self.n_clamped,
                "min_stored_I": self.extra.get("min_stored_I"),
            },
            "config": self.config.to_json(),
        }

    def csv_rows(self):
        for a, pid in enumerate(self.path_ids):
            for m, t in enumerate(self.times):
                yield [int(pid), float(t), *map(float, self.states[a, m])]

    def to_csv(self, target) -> None:
        n = self.states.shape[2]
        write_csv(target, ["path_id", "t"] + [f"x_{k}" for k in range(1, n + 1)], self.csv_rows())


def path_rng(master_seed: int, path_id: int) -> np.random.Generator:
    """Counter-based stream for one path, independent of scheduling."""
    key = np.array([master_seed & _MASK64, path_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def wiener_betas(n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent ``N(0, dt)`` draws."""
    if dt == 0:
        return np.zeros(n)
    return rng.standard_normal(n) * math.sqrt(dt)


class _Stepper:
    """Precomputed blocks of the transformed parameters."""

    def __init__(self, pack: TransformPack, scheme: str = "full-truncation"):
        pb = pack.params_bar
        I, J = pb.partition.i_idx, pb.partition.j_idx
        self.I, self.J, self.n = I, J, pb.n
        self.scheme = scheme
        self.lam = pack.lam
        self.m0I, self.m0J = pb.m0[I], pb.m0[J]
        self.MII_T = pb.M[np.ix_(I, I)].T.copy()
        self.MJI_T = pb.M[np.ix_(J, I)].T.copy()
        self.MJJ_T = pb.M[np.ix_(J, J)].T.copy()
        self.n0JJ = pb.n0[np.ix_(J, J)].copy()
        self.nIJJ = pb.nk[I][:, J][:, :, J].copy()  # (nI, nJ, nJ)
        off = lambda A: A - np.einsum("...ii->...i", A)[..., None] * np.eye(A.shape[-1])
        self.j_diag = not (np.any(off(self.n0JJ)) or (self.nIJJ.size and np.any(off(self.nIJJ))))
        self.LamInv_T = pack.LambdaInv.T.copy()
        self.Lam = pack.Lambda

    def raw_I(self, yI, dB_I, dt):
        """Euler increment with drift and diffusion read at the positive part."""
        yp = np.maximum(yI, 0.0)
        return yI + (self.m0I + yp @ self.MII_T) * dt + np.sqrt(self.lam * yp) * dB_I

    def step_I(self, yI, dB_I, dt):
        new = self.raw_I(yI, dB_I, dt)
        if self.scheme == "absorbed":
            return np.maximum(new, 0.0)
        return new

    def j_root(self, yI):
        yp = np.maximum(yI, 0.0)
        if self.j_diag:
            d = np.diagonal(self.n0JJ) + yp @ np.diagonal(self.nIJJ, axis1=1, axis2=2) \
                if self.nIJJ.size else np.broadcast_to(np.diagonal(self.n0JJ), yp.shape[:-1] + (len(self.J),))
            return np.sqrt(np.maximum(d, 0.0))
        S = self.n0JJ + np.einsum("...i,iab->...ab", yp, self.nIJJ)
        return psd_sqrt_batch(S, tol=1e-12)

    def apply_root(self, R, dB_J):
        if self.j_diag:
            return R * dB_J
        return np.einsum("...ab,...b->...a", R, dB_J)

    def step_J(self, yI, yJ, dB_J, dt, R=None):
        yp = np.maximum(yI, 0.0)
        if R is None:
            R = self.j_root(yI)
        drift = self.m0J + yp @ self.MJI_T + yJ @ self.MJJ_T
        return yJ + drift * dt + self.apply_root(R, dB_J)

    def to_x(self, Y):
        Yp = Y.copy()
        Yp[..., self.I] = np.maximum(Yp[..., self.I], 0.0)
        return Yp @ self.LamInv_T


def euler_step_I(pack: TransformPack, yI, dbeta, dt, scheme: str = "full-truncation"):
    """One step of the cone block; full truncation returns the unclamped state."""
    out = _Stepper(pack, scheme).step_I(np.asarray(yI, float), np.asarray(dbeta, float), dt)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite state in the I block", step=0)
    return out


def euler_step_J(pack: TransformPack, y, dbeta_J, dt):
    """One step of the J block at full state ``y`` (I coordinates read as positive parts)."""
    st = _Stepper(pack)
    y = np.asarray(y, float)
    out = st.step_J(y[..., st.I], y[..., st.J], np.asarray(dbeta_J, float), dt)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite state in the J block", step=0)
    return out


def chunk_size(cfg: SimConfig, n: int) -> int:
    per_path = cfg.n_steps * cfg.noise_refine * n
    return int(max(1, min(cfg.n_paths, NOISE_BUDGET // max(per_path, 1))))


def _run_chunk(st: _Stepper, y0: np.ndarray, cfg: SimConfig, pids: np.ndarray):
    n, r = st.n, cfg.noise_refine
    steps = cfg.n_steps
    c = len(pids)
    z = np.empty((c, steps * r, n))
    for a, pid in enumerate(pids):
        z[a] = path_rng(cfg.master_seed, int(pid)).standard_normal((steps * r, n))
    if r > 1:
        dB = z.reshape(c, steps, r, n).sum(axis=2) * math.sqrt(cfg.dt / r)
    else:
        dB = z * math.sqrt(cfg.dt)
    del z
    store = cfg.stored_steps()
    out = np.empty((c, len(store), n))
    Y = np.broadcast_to(y0, (c, n)).copy()
    slot = 0
    if store.size and store[0] == 0:
        out[:, 0] = st.to_x(Y)
        slot = 1
    I, J = st.I, st.J
    lo, clamped = 0.0, 0
    R = None
    for k in range(steps):
        yI = Y[:, I]
        if len(J):
            if R is None or k % cfg.freeze_root_steps == 0:
                R = st.j_root(yI)
            Y[:, J] = st.step_J(yI, Y[:, J], dB[:, k, J], cfg.dt, R)
        if len(I):
            raw = st.raw_I(yI, dB[:, k, I], cfg.dt)
            neg = raw < 0.0
            if neg.any():
                clamped += int(neg.sum())
                lo = min(lo, float(raw.min()))
                if cfg.scheme == "absorbed":
                    raw = np.maximum(raw, 0.0)
            Y[:, I] = raw
        if not np.isfinite(Y).all():
            raise BlowUpError(f"non-finite state at step {k + 1}", step=k + 1)
        if slot < len(store) and store[slot] == k + 1:
            out[:, slot] = st.to_x(Y)
            slot += 1
    return out, lo, clamped


def simulate_paths(p: AffineParams, x0: np.ndarray, cfg: SimConfig,
                   pack: TransformPack | None = None) -> PathEnsemble:
    """Euler ensemble of ``X`` started at ``x0``; deterministic in ``cfg``."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (p.n,):
        raise DomainError(f"x0 has shape {x0.shape}, expected ({p.n},)")
    if np.any(x0[p.partition.i_idx] < 0):
        raise DomainError("x0 is outside the cone (negative I coordinate)")
    pack = pack or build_transform(p)
    st = _Stepper(pack, cfg.scheme)
    y0 = pack.Lambda @ x0
    pids = np.arange(cfg.first_path_id, cfg.first_path_id + cfg.n_paths)
    cs = chunk_size(cfg, p.n)
    chunks = [pids[a:a + cs] for a in range(0, len(pids), cs)]
    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(lambda ch: _run_chunk(st, y0, cfg, ch), chunks))
    else:
        results = [_run_chunk(st, y0, cfg, ch) for ch in chunks]
    states = np.concatenate([r[0] for r in results], axis=0)
    lo = min(r[1] for r in results)
    clamped = sum(r[2] for r in results)
    times = cfg.stored_steps() * cfg.dt
    I = p.partition.i_idx
    extra = {"min_stored_I": float(states[:, :, I].min()) if len(I) else None,
             "chunk_size": cs}
    return PathEnsemble(cfg, times, states, pids, lo, clamped, extra)


# Exact Ornstein-Uhlenbeck ------------------------------------------------------

def _integrated_expm(M: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t expm(M s) ds`` via the augmented exponential (valid for singular M)."""
    n = M.shape[0]
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = M
    A[:n, n:] = np.eye(n)
    return expm(A * t)[:n, n:]


def ou_covariance_diag(rho: np.ndarray, n0: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t e^{Ms} n0 e^{M^T s} ds`` for ``M = diag(rho)``."""
    s = rho[:, None] + rho[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(np.abs(s * t) > 1e-12, np.expm1(s * t) / s, t + 0.5 * s * t * t)
    return n0 * f


def ou_covariance_vanloan(M: np.ndarray, n0: np.ndarray, t: float) -> np.ndarray:
    """Same integral for general ``M`` by a block matrix exponential."""
    n = M.shape[0]
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = -M
    A[:n, n:] = n0
    A[n:, n:] = M.T
    E = expm(A * t)
    Phi = E[n:, n:].T
    return Phi @ E[:n, n:]


def ou_moments(p: AffineParams, x0: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    if p.partition.nI:
        raise DomainError("ou_moments needs I to be empty")
    x0 = np.asarray(x0, dtype=float)
    mean = expm(p.M * t) @ x0 + _integrated_expm(p.M, t) @ p.m0
    if np.count_nonzero(p.M - np.diag(np.diag(p.M))) == 0:
        cov = ou_covariance_diag(np.diag(p.M), p.n0, t)
    else:
        cov = ou_covariance_vanloan(p.M, p.n0, t)
    return mean, 0.5 * (cov + cov.T)


def ou_exact(p: AffineParams, x0: np.ndarray, t: float, rng: np.random.Generator,
             size: int | None = None) -> np.ndarray:
    """Exact Gaussian draw(s) of ``X_t`` for the pure OU case."""
    mean, cov = ou_moments(p, x0, t)
    L = psd_sqrt(cov, tol=1e-10)
    if size is None:
        return mean + L @ rng.standard_normal(p.n)
    return mean + rng.standard_normal((size, p.n)) @ L.T


def simulate_ou_exact(p: AffineParams, x0: np.ndarray, cfg: SimConfig) -> PathEnsemble:
    """Exact OU ensemble at the stored times using the per-path streams."""
    store = cfg.stored_steps()
    times = store * cfg.dt
    pids = np.arange(cfg.first_path_id, cfg.first_path_id + cfg.n_paths)
    x0 = np.asarray(x0, dtype=float)
    states = np.empty((cfg.n_paths, len(times), p.n))
    moments = []
    prev = 0.0
    for t in times:
        h = t - prev
        E = expm(p.M * h)
        b = _integrated_expm(p.M, h) @ p.m0
        _, cov = ou_moments(p.replace(m0=np.zeros(p.n)), np.zeros(p.n), h)
        moments.append((E, b, psd_sqrt(cov, tol=1e-10)))
        prev = t
    for a, pid in enumerate(pids):
        rng = path_rng(cfg.master_seed, int(pid))
        x = x0
        for m, (E, b, L) in enumerate(moments):
            x = E @ x + b + L @ rng.standard_normal(p.n)
            states[a, m] = x
    return PathEnsemble(cfg, times, states, pids, 0.0, 0, {"exact": True})

"""Constructors for the Ornstein-Uhlenbeck, CIR-type and Heston-type families.

Sequence constants in a :class:`FamilySpec` are either explicit value lists
(a finite family, no tail information) or decay-rule objects such as
``{"rule": "power", "constants": {"c": 1, "p": 2}}`` (an infinite family
truncated at ``n``, with tail certificates).  Plain numbers are repeated
as explicit values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decay import SequenceRule, TailDecay
from .errors import ConstructionError
from .hilbert import IndexPartition, psd_check
from .params import AffineParams

FAMILIES = ("OU", "CIR", "Heston")

_DEFAULTS = {
    "lambda": SequenceRule.power_law(1.0, 2.0),
    # kappa_i / lambda_i = i^-1 / 2 keeps the ratio square-summable
    "kappa": SequenceRule.power_law(0.5, 3.0),
    "rho": SequenceRule.power_law(-1.0, 2.0),
    "m0": SequenceRule.power_law(1.0, 2.0),
    "n0": SequenceRule.power_law(1.0, 2.0),
}


@dataclass(frozen=True)
class FamilySpec:
    family: str
    n: int
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConstructionError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ConstructionError("n must be a positive integer")

    def to_json(self) -> dict:
        key = "nI" if self.family == "Heston" else "n"
        consts = {k: (v.to_json() if isinstance(v, SequenceRule) else v)
                  for k, v in self.constants.items()}
        return {"family": self.family, key: self.n, "constants": consts}

    @classmethod
    def from_json(cls, d: dict) -> "FamilySpec":
        try:
            fam = d["family"]
            n = d["nI"] if fam == "Heston" and "nI" in d else d["n"]
        except KeyError as exc:
            raise ConstructionError(f"missing family key {exc}") from exc
        return cls(fam, int(n), dict(d.get("constants", {})))


def _sequence(spec: FamilySpec, name: str, m: int) -> tuple[np.ndarray, SequenceRule | None]:
    """Values ``a_1..a_m`` and the rule behind them (``None`` for explicit values)."""
    raw = spec.constants.get(name, _DEFAULTS.get(name))
    if raw is None:
        raise ConstructionError(f"no value for sequence {name!r}")
    if isinstance(raw, dict):
        raw = SequenceRule.from_json(raw)
    if isinstance(raw, SequenceRule):
        return raw.values(m), raw
    vals = np.atleast_1d(np.asarray(raw, dtype=float))
    if vals.size == 1:
        vals = np.full(m, float(vals[0]))
    if vals.size != m:
        raise ConstructionError(f"sequence {name!r} has {vals.size} values, expected {m}")
    return vals, None


def _decay(**rules) -> TailDecay | None:
    rules = {k: v for k, v in rules.items() if v is not None}
    if not rules:
        return None
    return TailDecay(**{f"{k}_rule": v for k, v in rules.items()})


def make_cir(spec: FamilySpec) -> AffineParams:
    """``I = {1..n}``, ``n_i = lambda_i e_i e_i^T``, ``M = diag(rho)``."""
    if spec.family != "CIR":
        raise ConstructionError("make_cir needs a CIR spec")
    n = spec.n
    lam, lam_r = _sequence(spec, "lambda", n)
    rho, rho_r = _sequence(spec, "rho", n)
    m0, m0_r = _sequence(spec, "m0", n)
    if np.any(lam <= 0):
        raise ConstructionError("CIR needs lambda_i > 0")
    if np.any(m0 < 0):
        raise ConstructionError("CIR needs m0_i >= 0")
    nk = np.zeros((n, n, n))
    for i in range(n):
        nk[i, i, i] = lam[i]
    sw, _ = _sequence(spec, "sigma_w", n) if "sigma_w" in spec.constants else (lam, None)
    return AffineParams(
        partition=IndexPartition.from_I(n, range(1, n + 1)),
        m0=m0, M=np.diag(rho), n0=np.zeros((n, n)), nk=nk, sigma_w_diag=sw,
        decay=_decay(**{"lambda": lam_r, "rho": rho_r, "m0": m0_r}),
    )


def make_heston(spec: FamilySpec) -> AffineParams:
    """``I = {1..nI}``, ``J = {nI+1..2nI}`` paired by ``tau(i) = nI + i``.

    ``n_i`` has ``[[lambda_i, kappa_i], [kappa_i, lambda_i]]`` on ``(i, tau(i))``,
    ``n0`` is diagonal on ``J x J``, ``M_II = diag(rho)`` and the J rows of
    ``M`` are ``M[tau(i), tau(i)] = mj_i`` plus ``M[tau(i), i] = coupling_i``.
    """
    if spec.family != "Heston":
        raise ConstructionError("make_heston needs a Heston spec")
    m = spec.n
    n = 2 * m
    lam, lam_r = _sequence(spec, "lambda", m)
    kap, kap_r = _sequence(spec, "kappa", m)
    rho, rho_r = _sequence(spec, "rho", m)
    m0, m0_r = _sequence(spec, "m0", m)
    n0d, _ = _sequence(spec, "n0", m)
    mj = _sequence(spec, "mj", m)[0] if "mj" in spec.constants else rho
    cpl = _sequence(spec, "coupling", m)[0] if "coupling" in spec.constants else np.zeros(m)
    m0J = _sequence(spec, "m0J", m)[0] if "m0J" in spec.constants else np.zeros(m)
    if np.any(lam <= 0):
        raise ConstructionError("Heston needs lambda_i > 0")
    if np.any(kap < 0) or np.any(kap > lam):
        raise ConstructionError("Heston needs 0 <= kappa_i <= lambda_i")
    if np.any(n0d < 0) or np.any(m0 < 0):
        raise ConstructionError("Heston needs n0_JJ >= 0 and m0_I >= 0")
    tau = np.arange(m) + m
    nk = np.zeros((n, n, n))
    M = np.zeros((n, n))
    n0 = np.zeros((n, n))
    for i in range(m):
        t = tau[i]
        nk[i][np.ix_([i, t], [i, t])] = [[lam[i], kap[i]], [kap[i], lam[i]]]
        M[i, i] = rho[i]
        M[t, t] = mj[i]
        M[t, i] = cpl[i]
        n0[t, t] = n0d[i]
    sw = np.concatenate([lam, lam])
    if "sigma_w" in spec.constants:
        sw = _sequence(spec, "sigma_w", n)[0]
    return AffineParams(
        partition=IndexPartition.from_I(n, range(1, m + 1)),
        m0=np.concatenate([m0, m0J]), M=M, n0=n0, nk=nk, sigma_w_diag=sw,
        decay=_decay(**{"lambda": lam_r, "kappa": kap_r, "rho": rho_r, "m0": m0_r}),
    )


def make_ou(spec: FamilySpec) -> AffineParams:
    """``I`` empty, ``N = 0``, constant ``n0``; ``M`` and ``m0`` free."""
    if spec.family != "OU":
        raise ConstructionError("make_ou needs an OU spec")
    n = spec.n
    c = spec.constants
    if "M" in c:
        M = np.asarray(c["M"], dtype=float)
    else:
        M = np.diag(_sequence(spec, "rho", n)[0])
    if "n0_matrix" in c:
        n0 = np.asarray(c["n0_matrix"], dtype=float)
    else:
        d = _sequence(spec, "n0", n)[0]
        if np.any(d < 0):
            raise ConstructionError("OU needs a PSD n0")
        n0 = np.diag(d)
    if not psd_check(n0)[0]:
        raise ConstructionError("OU needs a PSD n0")
    m0 = _sequence(spec, "m0", n)[0]
    sw = _sequence(spec, "sigma_w", n)[0] if "sigma_w" in c else np.ones(n)
    return AffineParams(
        partition=IndexPartition(n, (), tuple(range(1, n + 1))),
        m0=m0, M=M, n0=n0, nk=np.zeros((n, n, n)), sigma_w_diag=sw,
    )


def make_family(spec: FamilySpec | dict) -> AffineParams:
    if isinstance(spec, dict):
        spec = FamilySpec.from_json(spec)
    return {"OU": make_ou, "CIR": make_cir, "Heston": make_heston}[spec.family](spec)


def _rules(*names) -> dict:
    return {k: _DEFAULTS[k] for k in names}


def shipped_specs() -> dict[str, FamilySpec]:
    """Named family specs emitted by the CLI."""
    return {
        "cir1": FamilySpec("CIR", 1, {"lambda": [2.0], "rho": [-1.0], "m0": [1.0]}),
        "cir10": FamilySpec("CIR", 10, _rules("lambda", "rho", "m0")),
        "heston1": FamilySpec("Heston", 1, {"lambda": [0.8], "kappa": [0.2], "rho": [-1.0],
                                            "m0": [0.8], "n0": [0.3], "mj": [-0.5]}),
        "heston10": FamilySpec("Heston", 10, _rules("lambda", "kappa", "rho", "m0", "n0")),
        "ou1": FamilySpec("OU", 1, {"rho": [-1.0], "m0": [1.0], "n0": [1.0]}),
        "ou3": FamilySpec("OU", 3, {"M": [[-1.0, 0.3, 0.0], [0.0, -0.5, 0.2], [0.1, 0.0, -2.0]],
                                    "m0": [0.5, -0.2, 0.1],
                                    "n0_matrix": [[1.0, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]]}),
    }


def random_admissible(rng: np.random.Generator, n: int | None = None,
                      nI: int | None = None) -> AffineParams:
    """Random admissible parameters with a random partition (for property tests)."""
    n = int(rng.integers(1, 21)) if n is None else n
    nI = int(rng.integers(0, n + 1)) if nI is None else nI
    I = sorted(rng.choice(np.arange(1, n + 1), size=nI, replace=False).tolist())
    part = IndexPartition.from_I(n, I)
    Ii, Jj = part.i_idx, part.j_idx
    nJ = len(Jj)
    m0 = rng.normal(size=n)
    m0[Ii] = rng.exponential(1.0, nI)
    M = np.zeros((n, n))
    M[np.ix_(Ii, Ii)] = rng.exponential(0.2, (nI, nI)) * (rng.random((nI, nI)) < 0.3)
    M[Ii, Ii] = rng.normal(-1.0, 0.5, nI)
    M[Jj, :] = rng.normal(0.0, 0.3, (nJ, n))
    n0 = np.zeros((n, n))
    if nJ:
        B = rng.normal(0.0, 0.5, (nJ, nJ))
        n0[np.ix_(Jj, Jj)] = B @ B.T / nJ
    nk = np.zeros((n, n, n))
    for i in Ii:
        a = float(rng.exponential(1.0)) * (rng.random() < 0.9)
        mat = np.zeros((n, n))
        mat[i, i] = a
        if nJ:
            C = rng.normal(0.0, 0.4, (nJ, nJ))
            JJ = C @ C.T / nJ
            if a > 0:
                b = rng.normal(0.0, 0.5, nJ) * a
                mat[Jj, i] = b
                mat[i, Jj] = b
                JJ = JJ + np.outer(b, b) / a
            mat[np.ix_(Jj, Jj)] = JJ
        nk[i] = mat
    return AffineParams(part, m0, M, n0, nk, rng.uniform(0.5, 2.0, n))

"""Symbolic decay rules and tail certificates.

A truncated computation only sees coordinates ``1..n``.  When parameters
come from an infinite family we attach closed-form rules for how the
sequences decay, so summability conditions can be certified beyond the
truncation instead of merely evaluated on it.

Every rule has the form ``a_i = c * i**(-p) * r**i``; power laws have
``r = 1`` and geometric rules ``p = 0``.  Products, quotients and powers of
rules stay in this class, which keeps all tail bounds closed-form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

PASS = "pass"
FAIL = "fail"
TRUNC = "truncation-only"


@dataclass(frozen=True)
class SequenceRule:
    """``a_i = coef * i**(-power) * ratio**i`` for ``i >= 1``."""

    coef: float
    power: float = 0.0
    ratio: float = 1.0

    def __post_init__(self):
        if self.ratio < 0:
            raise DomainError("ratio must be non-negative")

    @classmethod
    def power_law(cls, c: float, p: float) -> "SequenceRule":
        return cls(float(c), float(p), 1.0)

    @classmethod
    def geometric(cls, c: float, r: float) -> "SequenceRule":
        return cls(float(c), 0.0, float(r))

    @classmethod
    def constant(cls, c: float) -> "SequenceRule":
        return cls(float(c), 0.0, 1.0)

    def __call__(self, i):
        i = np.asarray(i, dtype=float)
        return self.coef * i ** (-self.power) * self.ratio ** i

    def values(self, n: int) -> np.ndarray:
        return self(np.arange(1, n + 1))

    def __mul__(self, other):
        if isinstance(other, SequenceRule):
            return SequenceRule(self.coef * other.coef, self.power + other.power,
                                self.ratio * other.ratio)
        return SequenceRule(self.coef * float(other), self.power, self.ratio)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, SequenceRule):
            if other.coef == 0 or other.ratio == 0:
                raise DomainError("division by a vanishing rule")
            return SequenceRule(self.coef / other.coef, self.power - other.power,
                                self.ratio / other.ratio)
        return SequenceRule(self.coef / float(other), self.power, self.ratio)

    def __pow__(self, k: float):
        return SequenceRule(abs(self.coef) ** k, self.power * k, self.ratio ** k)

    def abs(self) -> "SequenceRule":
        return SequenceRule(abs(self.coef), self.power, self.ratio)

    def tail_sum(self, n: int) -> float | None:
        """Upper bound on ``sum_{i>n} |a_i|``.

        Returns ``math.inf`` for a divergent series and ``None`` when no
        closed-form bound is available (growing power under a geometric
        factor).
        """
        c = abs(self.coef)
        if c == 0.0 or self.ratio == 0.0:
            return 0.0
        p, r = self.power, self.ratio
        if r > 1.0:
            return math.inf
        if r == 1.0:
            if p <= 1.0:
                return math.inf
            if n == 0:
                return c * p / (p - 1.0)
            return c * n ** (1.0 - p) / (p - 1.0)
        if p >= 0.0:
            return c * (n + 1) ** (-p) * r ** (n + 1) / (1.0 - r)
        return None

    def tail_sup(self, n: int) -> float | None:
        """Upper bound on ``sup_{i>n} |a_i|`` or ``None`` if unbounded/unknown."""
        c = abs(self.coef)
        if c == 0.0 or self.ratio == 0.0:
            return 0.0
        p, r = self.power, self.ratio
        if r > 1.0 or (r == 1.0 and p < 0.0):
            return None
        if p >= 0.0:
            return float(self(n + 1)) if c else 0.0
        return None

    def to_json(self) -> dict:
        if self.ratio == 1.0:
            return {"rule": "power", "constants": {"c": self.coef, "p": self.power}}
        if self.power == 0.0:
            return {"rule": "geometric", "constants": {"c": self.coef, "r": self.ratio}}
        return {"rule": "power-geometric",
                "constants": {"c": self.coef, "p": self.power, "r": self.ratio}}

    @classmethod
    def from_json(cls, d: dict) -> "SequenceRule":
        try:
            kind = d["rule"]
            k = d["constants"]
            if kind == "power":
                return cls.power_law(k["c"], k["p"])
            if kind == "geometric":
                return cls.geometric(k["c"], k["r"])
            if kind == "power-geometric":
                return cls(float(k["c"]), float(k["p"]), float(k["r"]))
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed decay rule {d!r}") from exc
        raise DomainError(f"unknown decay rule kind {kind!r}")


@dataclass(frozen=True)
class TailDecay:
    """Decay rules attached to an infinite family.

    ``lambda_rule`` bounds ``||pi_I S(e_i) e_i||``, ``kappa_rule`` bounds
    ``||pi_J S(e_i) e_i||``, ``rho_rule`` the diagonal drift and ``m0_rule``
    the constant drift on ``I``.  ``nu_rule`` overrides the default retraction
    weights.  ``None`` means "no information": the matching certificate
    degrades to truncation-only.
    """

    lambda_rule: SequenceRule | None = None
    kappa_rule: SequenceRule | None = None
    rho_rule: SequenceRule | None = None
    m0_rule: SequenceRule | None = None
    nu_rule: SequenceRule | None = None

    def to_json(self) -> dict:
        out = {}
        for name in ("lambda", "kappa", "rho", "m0", "nu"):
            r = getattr(self, f"{name}_rule")
            if r is not None:
                out[name] = r.to_json()
        return out

    @classmethod
    def from_json(cls, d: dict | None) -> "TailDecay | None":
        if d is None:
            return None
        known = {"lambda", "kappa", "rho", "m0", "nu"}
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown decay keys {sorted(extra)}")
        return cls(**{f"{k}_rule": SequenceRule.from_json(v) for k, v in d.items()})


@dataclass(frozen=True)
class Certificate:
    """Truncated value plus tail bound for a series ``sum_i a_i``."""

    truncated: float
    tail: float | None
    status: str
    detail: str = field(default="")

    @property
    def total(self) -> float | None:
        if self.tail is None:
            return None
        return self.truncated + self.tail


def certify_sum(terms: np.ndarray, rule: SequenceRule | None, indices=None,
                rtol: float = 1e-9, atol: float = 1e-14) -> Certificate:
    """Certify ``sum_i terms_i`` (non-negative terms) against a dominating rule.

    ``indices`` are the 1-based labels of ``terms`` (defaults to ``1..m``).
    The rule must dominate every truncated term, otherwise the tail bound is
    not trusted and the result is truncation-only.
    """
    terms = np.abs(np.asarray(terms, dtype=float))
    m = terms.size
    idx = np.arange(1, m + 1) if indices is None else np.asarray(indices)
    trunc = float(terms.sum())
    if m == 0:
        return Certificate(0.0, 0.0, PASS, "empty index set")
    if rule is None:
        return Certificate(trunc, None, TRUNC, "no decay rule attached")
    if m:
        bound = np.abs(rule(idx))
        bad = terms > bound * (1.0 + rtol) + atol
        if np.any(bad):
            k = int(idx[np.argmax(bad)])
            return Certificate(trunc, None, TRUNC, f"rule does not dominate term {k}")
    last = int(idx.max()) if m else 0
    tail = rule.tail_sum(last)
    if tail is None:
        return Certificate(trunc, None, TRUNC, "no closed-form tail bound for rule")
    if math.isinf(tail):
        return Certificate(trunc, tail, FAIL, "rule tail diverges")
    return Certificate(trunc, tail, PASS, f"tail <= {tail:.3e}")


def certify_sup(terms: np.ndarray, rule: SequenceRule | None, indices=None) -> Certificate:
    """Certify ``sup_i |terms_i| < inf`` using a rule for the tail."""
    terms = np.abs(np.asarray(terms, dtype=float))
    trunc = float(terms.max()) if terms.size else 0.0
    if rule is None:
        return Certificate(trunc, None, TRUNC, "no decay rule attached")
    last = int(np.max(indices)) if indices is not None and len(indices) else terms.size
    tail = rule.tail_sup(last)
    if tail is None:
        return Certificate(trunc, None, FAIL, "rule unbounded")
    return Certificate(trunc, tail, PASS, f"tail sup <= {tail:.3e}")

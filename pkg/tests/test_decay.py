import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from affine_hilbert.decay import FAIL, PASS, TRUNC, SequenceRule, TailDecay, certify_sum, certify_sup
from affine_hilbert.errors import DomainError

rules = st.builds(
    SequenceRule,
    st.floats(0.01, 10.0),
    st.floats(0.0, 4.0),
    st.floats(0.05, 1.0),
)


def test_values():
    r = SequenceRule.power_law(2.0, 2.0)
    assert np.allclose(r.values(3), [2.0, 0.5, 2.0 / 9.0])
    g = SequenceRule.geometric(1.0, 0.5)
    assert np.allclose(g.values(3), [0.5, 0.25, 0.125])


def test_algebra():
    a = SequenceRule.power_law(1.0, 2.0)
    b = SequenceRule.power_law(0.5, 3.0)
    q = b / a
    assert q.coef == 0.5 and q.power == 1.0
    assert (a * b).power == 5.0
    assert (a ** 2).power == 4.0
    assert np.allclose((a * 3).values(4), 3 * a.values(4))


def test_p_series_tails():
    # sum_{i>n} i^-2 <= 1/n, and the i^-1 series diverges
    assert SequenceRule.power_law(1.0, 2.0).tail_sum(10) == pytest.approx(0.1)
    assert SequenceRule.power_law(1.0, 1.0).tail_sum(10) == math.inf
    assert SequenceRule.geometric(1.0, 2.0).tail_sum(3) == math.inf
    assert SequenceRule.geometric(1.0, 0.5).tail_sum(2) == pytest.approx(0.25)


@given(rules, st.integers(0, 50))
def test_tail_sum_dominates(rule, n):
    tail = rule.tail_sum(n)
    if tail is None or math.isinf(tail):
        return
    i = np.arange(n + 1, n + 20001)
    assert np.sum(rule(i)) <= tail * (1 + 1e-12) + 1e-300


@given(rules, st.integers(0, 50))
def test_tail_sup_dominates(rule, n):
    sup = rule.tail_sup(n)
    assert sup is not None
    assert np.max(rule(np.arange(n + 1, n + 500))) <= sup * (1 + 1e-12)


def test_json_roundtrip():
    for r in (SequenceRule.power_law(1, 2), SequenceRule.geometric(2, 0.5), SequenceRule(1, 1, 0.5)):
        assert SequenceRule.from_json(r.to_json()) == r
    td = TailDecay(lambda_rule=SequenceRule.power_law(1, 2), rho_rule=SequenceRule.power_law(-1, 2))
    assert TailDecay.from_json(td.to_json()) == td


def test_json_errors():
    with pytest.raises(DomainError):
        SequenceRule.from_json({"rule": "spline", "constants": {}})
    with pytest.raises(DomainError):
        SequenceRule.from_json({"rule": "power"})
    with pytest.raises(DomainError):
        TailDecay.from_json({"omega": {}})


class TestCertificates:
    def test_pass_with_rule(self):
        r = SequenceRule.power_law(1.0, 2.0)
        c = certify_sum(r.values(50), r)
        assert c.status == PASS
        assert c.tail == pytest.approx(1 / 50)
        assert c.total == pytest.approx(c.truncated + c.tail)

    def test_truncation_only_without_rule(self):
        c = certify_sum(np.ones(5), None)
        assert c.status == TRUNC and c.truncated == 5.0 and c.total is None

    def test_non_dominating_rule(self):
        r = SequenceRule.power_law(1.0, 2.0)
        c = certify_sum(2 * r.values(5), r)
        assert c.status == TRUNC

    def test_divergent(self):
        r = SequenceRule.power_law(1.0, 0.5)
        assert certify_sum(r.values(5), r).status == FAIL

    def test_empty_is_vacuous(self):
        assert certify_sum(np.zeros(0), None).status == PASS

    def test_sup(self):
        r = SequenceRule.power_law(-1.0, 2.0)
        assert certify_sup(r.values(4), r).status == PASS
        assert certify_sup(np.ones(4), SequenceRule.power_law(1.0, -1.0)).status == FAIL
        assert certify_sup(np.ones(4), None).status == TRUNC

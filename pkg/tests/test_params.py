import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from affine_hilbert.decay import FAIL, PASS, TRUNC
from affine_hilbert.errors import ConstructionError
from affine_hilbert.families import FamilySpec, make_family, random_admissible
from affine_hilbert.hilbert import IndexPartition, psd_check
from affine_hilbert.params import (
    AffineParams,
    S_op,
    check_admissibility,
    check_all,
    check_existence_side_conditions,
    check_inward,
    check_parallel,
    check_uniqueness_conditions,
    lambda_diagonal,
    lambda_kappa,
    mu,
)


def _params(n, I, **kw):
    part = IndexPartition.from_I(n, I)
    base = dict(m0=np.zeros(n), M=np.zeros((n, n)), n0=np.zeros((n, n)),
                nk=np.zeros((n, n, n)), sigma_w_diag=np.ones(n))
    base.update(kw)
    return AffineParams(part, **base)


def cir(n=3):
    return make_family(FamilySpec("CIR", n, {}))


def heston(nI=3):
    return make_family(FamilySpec("Heston", nI, {}))


def failed_pairs(p):
    return {(name, c) for name, rep in check_all(p).items() for c in rep.failed}


class TestConstruction:
    def test_shapes(self):
        with pytest.raises(ConstructionError):
            _params(2, [1], m0=np.zeros(3))
        with pytest.raises(ConstructionError):
            _params(2, [1], M=np.full((2, 2), np.nan))

    def test_read_only(self):
        p = cir()
        with pytest.raises(ValueError):
            p.m0[0] = 5.0

    def test_json_roundtrip(self, shipped):
        for p in shipped.values():
            q = AffineParams.from_json(json.loads(json.dumps(p.to_json())))
            for name in ("m0", "M", "n0", "nk", "sigma_w_diag"):
                assert np.array_equal(getattr(p, name), getattr(q, name))
            assert q.partition == p.partition
            assert q.decay == p.decay

    @pytest.mark.parametrize("mutate", [
        lambda d: d.pop("M"),
        lambda d: d.update(nk=d["nk"][:-1]),
        lambda d: d.update(m0="abc"),
        lambda d: d.update(I=[5]),
    ])
    def test_json_malformed(self, mutate):
        d = cir().to_json()
        mutate(d)
        with pytest.raises((ConstructionError, ValueError)):
            AffineParams.from_json(d)


class TestMuS:
    def test_mu(self):
        p = _params(2, [], m0=np.array([1.0, 2.0]), M=-np.eye(2))
        assert np.array_equal(mu(p, np.zeros(2)), [1.0, 2.0])
        assert np.array_equal(mu(_params(2, [], M=np.eye(2)), [1.0, 2.0]), [1.0, 2.0])
        p = _params(2, [], m0=np.array([1.0, 0.0]), M=-np.eye(2))
        assert np.array_equal(mu(p, [2.0, 3.0]), [-1.0, -3.0])

    def test_S(self):
        n0 = np.array([[0.0, 0.0], [0.0, 2.0]])
        nk = np.zeros((2, 2, 2))
        nk[0] = np.diag([3.0, 0.0])
        p = _params(2, [1], n0=n0, nk=nk)
        assert np.array_equal(S_op(p, np.zeros(2)), n0)
        assert np.allclose(S_op(p, [5.0, 7.0]), np.diag([15.0, 2.0]))

    def test_cir_S_of_unit_vectors(self):
        p = cir(4)
        lam = p.nk[np.arange(4), np.arange(4), np.arange(4)]
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1.0
            expect = np.zeros((4, 4))
            expect[i, i] = lam[i]
            assert np.array_equal(S_op(p, e), expect)

    def test_S_psd_on_cone(self, rng):
        for _ in range(20):
            p = random_admissible(rng)
            for _ in range(100):
                x = rng.normal(size=p.n) * 3
                x[p.partition.i_idx] = np.abs(x[p.partition.i_idx])
                assert psd_check(S_op(p, x), tol=1e-9)[0]


class TestCheckers:
    @pytest.mark.parametrize("n", [1, 2, 10, 50])
    def test_families_pass_everything(self, n):
        for p in (cir(n), heston(n), make_family(FamilySpec("OU", n, {}))):
            reps = check_all(p)
            for name, rep in reps.items():
                assert rep.overall, (name, rep.failed)

    def test_rule_families_certified(self):
        for p in (cir(50), heston(20)):
            for name, rep in check_all(p).items():
                for f in rep.findings:
                    assert f.status == PASS, (name, f)

    def test_finite_family_truncation_only(self, shipped):
        adm = check_admissibility(shipped["cir1"])
        assert adm["n_i_norm_sq_sum"].status == TRUNC
        assert adm.overall

    def test_examples(self):
        p = cir()
        assert check_admissibility(p.with_entry("n0", (0, 0), 0.5))["n0_II_zero"].status == FAIL
        assert check_admissibility(p.with_entry("nk", (1, 1, 1), -0.2)).failed >= {"n_k_psd"}
        assert check_inward(_params(2, [1, 2], M=-np.eye(2), m0=np.ones(2))).overall
        assert "M_offdiag_I_nonneg" in check_inward(p.with_entry("M", (1, 0), -0.1)).failed
        h = heston(2)
        assert "M_IJ_zero" in check_inward(h.with_entry("M", (0, 2), 0.3)).failed
        assert "n0_annihilates_HI" in check_parallel(p.replace(n0=np.eye(3))).failed
        assert "n_i_ej_vanish" in check_parallel(p.with_entry("nk", (0, 1, 1), 0.5)).failed

    def test_admissible_implies_inward_parallel(self):
        for p in (cir(10), heston(10)):
            assert check_admissibility(p).overall
            assert check_inward(p).overall and check_parallel(p).overall

    def test_lambda_kappa(self, shipped):
        lam, kap = lambda_kappa(shipped["cir10"])
        assert np.array_equal(lam, 1.0 / np.arange(1, 11) ** 2)
        assert np.all(kap == 0)
        lam, kap = lambda_kappa(shipped["heston1"])
        assert lam == pytest.approx([0.8]) and kap == pytest.approx([0.2])
        z = _params(3, [1, 2])
        assert np.all(lambda_kappa(z)[0] == 0) and np.all(lambda_kappa(z)[1] == 0)

    def test_lambda_formulas_agree(self, rng):
        for _ in range(50):
            p = random_admissible(rng)
            if check_parallel(p).overall:
                assert np.allclose(lambda_kappa(p)[0], lambda_diagonal(p), atol=1e-12)

    def test_existence_rotation_fails(self):
        c, s = np.cos(0.3), np.sin(0.3)
        p = _params(2, [1, 2], M=np.array([[c, -s], [s, c]]))
        rep = check_existence_side_conditions(p, np.array([1.0, 0.5]))
        assert "M_II_commutes_T" in rep.failed

    def test_existence_m0_nu_squared(self):
        nu = np.array([1.0, 0.5, 0.25])
        p = _params(3, [1, 2, 3], m0=nu ** 2)
        assert check_existence_side_conditions(p, nu)["m0_in_HI0"].passed

    def test_uniqueness_examples(self):
        p = cir()
        sw = np.eye(3)
        sw[0, 1] = sw[1, 0] = 0.3
        assert "sigma_w_diagonal" in check_uniqueness_conditions(p.replace(sigma_w=sw)).failed
        dense = _params(3, [1, 2, 3], M=np.ones((3, 3)))
        assert check_uniqueness_conditions(dense)["drift_lipschitz_l1"].status == TRUNC

    @given(st.integers(0, 2 ** 32 - 1))
    def test_random_admissible_passes(self, seed):
        p = random_admissible(np.random.default_rng(seed))
        assert check_admissibility(p).overall


# (family, array name, index, value, expected set of (checker, condition) failures)
MUTATIONS = [
    ("cir", "m0", (0,), -0.5,
     {("admissibility", "m0_in_X"), ("inward", "m0_in_X"), ("existence", "m0_in_HI0")}),
    ("cir", "M", (0, 1), -0.1,
     {("admissibility", "m_i_offdiag_nonneg"), ("inward", "M_offdiag_I_nonneg"),
      ("existence", "M_II_commutes_T")}),
    ("cir", "M", (0, 1), 0.1, {("existence", "M_II_commutes_T")}),
    ("heston", "M", (0, 3), 0.3, {("admissibility", "m_j_in_HJ"), ("inward", "M_IJ_zero")}),
    ("heston", "m0", (0,), -1.0,
     {("admissibility", "m0_in_X"), ("inward", "m0_in_X"), ("existence", "m0_in_HI0")}),
    ("heston", "M", (1, 0), -0.2,
     {("admissibility", "m_i_offdiag_nonneg"), ("inward", "M_offdiag_I_nonneg"),
      ("existence", "M_II_commutes_T")}),
    ("heston", "n0", (0, 0), 1.0,
     {("admissibility", "n0_II_zero"), ("parallel", "n0_annihilates_HI"),
      ("uniqueness", "diagonal_volatility")}),
    ("heston", "n0", (3, 0), 0.1,
     {("admissibility", "n0_IJ_zero"), ("parallel", "n0_annihilates_HI"),
      ("uniqueness", "diagonal_volatility")}),
    ("heston", "n0", (3, 4), 0.2, {("admissibility", "n0_JJ_psd")}),
    ("heston", "n0", (3, 3), -1.0, {("admissibility", "n0_JJ_psd")}),
    ("cir", "nk", (0, 0, 0), -0.1, {("admissibility", "n_k_psd"), ("admissibility", "n_i_II_diag")}),
    ("cir", "nk", (2, 2, 2), -0.3, {("admissibility", "n_k_psd"), ("admissibility", "n_i_II_diag")}),
    ("heston", "nk", (3, 3, 3), 1.0,
     {("admissibility", "n_j_zero"), ("parallel", "N_zero_on_HJ"),
      ("uniqueness", "diagonal_volatility")}),
    ("heston", "nk", (4, 0, 0), 0.2,
     {("admissibility", "n_j_zero"), ("parallel", "N_zero_on_HJ"),
      ("uniqueness", "diagonal_volatility")}),
    ("cir", "nk", (0, 1, 1), 0.5,
     {("admissibility", "n_i_II_diag"), ("parallel", "n_i_ej_vanish"),
      ("uniqueness", "diagonal_volatility")}),
    ("heston", "nk", (1, 0, 0), 0.3,
     {("admissibility", "n_i_II_diag"), ("parallel", "n_i_ej_vanish"),
      ("uniqueness", "diagonal_volatility")}),
    ("heston", "nk", (0, 0, 3), 0.05, {("admissibility", "n_k_psd"), ("admissibility", "n_i_IJ_sym")}),
    ("heston", "nk", (0, 4, 4), -0.5, {("admissibility", "n_k_psd"), ("admissibility", "n_i_JJ_psd")}),
    ("cir", "nk", (1, 0, 1), 0.1, {("admissibility", "n_k_psd"), ("admissibility", "n_i_II_diag")}),
    ("cir", "sigma_w_diag", (2,), -1.0, {("uniqueness", "sigma_w_diagonal")}),
]


def mutate(fam, name, idx, value):
    return (cir() if fam == "cir" else heston()).with_entry(name, idx, value)


@pytest.mark.parametrize("fam,name,idx,value,expected", MUTATIONS,
                         ids=[f"{m[0]}-{m[1]}{list(m[2])}={m[3]}" for m in MUTATIONS])
def test_single_entry_mutation_flips_exact_findings(fam, name, idx, value, expected):
    assert failed_pairs(cir()) == set() and failed_pairs(heston()) == set()
    assert failed_pairs(mutate(fam, name, idx, value)) == expected


def test_sigma_w_coupling_mutation():
    sw = np.eye(3)
    sw[0, 2] = 0.2
    assert failed_pairs(cir().replace(sigma_w=sw)) == {("uniqueness", "sigma_w_diagonal")}

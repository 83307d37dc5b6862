import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from affine_hilbert.decay import PASS
from affine_hilbert.errors import ConstructionError
from affine_hilbert.families import FamilySpec, make_family, random_admissible, shipped_specs
from affine_hilbert.hilbert import psd_check
from affine_hilbert.params import S_op, check_admissibility, check_all
from affine_hilbert.simulate import ou_exact
from affine_hilbert.transform import build_D, build_transform


def test_scalar_cir():
    p = make_family(FamilySpec("CIR", 1, {"lambda": [2.0], "rho": [-1.0], "m0": [1.0]}))
    assert p.partition.I == (1,) and p.partition.J == ()
    assert p.nk[0, 0, 0] == 2.0 and p.M[0, 0] == -1.0 and p.m0[0] == 1.0


def test_cir_tail_certificates_n50():
    p = make_family(FamilySpec("CIR", 50, {}))
    for rep in check_all(p).values():
        assert all(f.status == PASS for f in rep.findings)


def test_cir_identity_transform():
    pack = build_transform(make_family(FamilySpec("CIR", 7, {})))
    assert np.array_equal(pack.Lambda, np.eye(7))
    assert all(np.array_equal(getattr(pack.params_bar, a), getattr(make_family(FamilySpec("CIR", 7, {})), a))
               for a in ("m0", "M", "n0", "nk"))


def test_heston_pair_D():
    p = make_family(FamilySpec("Heston", 1, {"lambda": [0.8], "kappa": [0.2], "rho": [-1.0], "m0": [0.5]}))
    assert build_D(p)[:, 0] == pytest.approx([0.0, -0.25])


def test_heston_support_and_psd():
    m = 6
    p = make_family(FamilySpec("Heston", m, {}))
    lam = 1.0 / np.arange(1, m + 1) ** 2
    kap = 0.5 / np.arange(1, m + 1) ** 3
    for i in range(m):
        t = m + i
        mask = np.zeros((2 * m, 2 * m), dtype=bool)
        mask[np.ix_([i, t], [i, t])] = True
        assert np.all(p.nk[i][~mask] == 0)
        assert p.nk[i][i, i] == pytest.approx(lam[i]) and p.nk[i][t, t] == pytest.approx(lam[i])
        assert p.nk[i][i, t] == pytest.approx(kap[i]) and p.nk[i][t, i] == pytest.approx(kap[i])
        w = np.linalg.eigvalsh(p.nk[i][np.ix_([i, t], [i, t])])
        assert w == pytest.approx(sorted([lam[i] - kap[i], lam[i] + kap[i]]))
        assert psd_check(p.nk[i])[0]
    assert np.all(p.nk[m:] == 0)


def test_heston_full_battery():
    for nI in (1, 2, 10, 20):
        reps = check_all(make_family(FamilySpec("Heston", nI, {})))
        assert all(r.overall for r in reps.values())


@pytest.mark.parametrize("family,consts", [
    ("Heston", {"lambda": [0.5], "kappa": [0.6]}),
    ("Heston", {"lambda": [-0.5]}),
    ("CIR", {"lambda": [0.0]}),
    ("CIR", {"m0": [-1.0]}),
    ("CIR", {"lambda": [1.0, 2.0]}),
    ("OU", {"n0_matrix": [[1.0, 0.0], [0.0, -1.0]]}),
])
def test_construction_errors(family, consts):
    n = 2 if "n0_matrix" in consts else 1
    with pytest.raises(ConstructionError):
        make_family(FamilySpec(family, n, consts))


def test_spec_validation():
    with pytest.raises(ConstructionError):
        FamilySpec("Vasicek", 1)
    with pytest.raises(ConstructionError):
        FamilySpec("CIR", 0)
    with pytest.raises(ConstructionError):
        FamilySpec.from_json({"family": "CIR"})


def test_ou_properties(rng, shipped):
    p = shipped["ou3"]
    for _ in range(10):
        x = rng.normal(size=3) * 5
        assert np.array_equal(S_op(p, x), p.n0)
    assert check_admissibility(p).overall
    assert ou_exact(p, np.zeros(3), 1.0, rng).shape == (3,)


def test_shipped_roundtrip():
    for name, spec in shipped_specs().items():
        d = json.loads(json.dumps(spec.to_json()))
        again = FamilySpec.from_json(d)
        a, b = make_family(spec), make_family(again)
        for attr in ("m0", "M", "n0", "nk", "sigma_w_diag"):
            assert np.array_equal(getattr(a, attr), getattr(b, attr)), (name, attr)
    assert "nI" in shipped_specs()["heston10"].to_json()


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20))
def test_random_admissible_battery(seed, n):
    p = random_admissible(np.random.default_rng(seed), n=n)
    reps = check_all(p)
    for name in ("admissibility", "inward", "parallel"):
        assert reps[name].overall, (name, reps[name].failed)

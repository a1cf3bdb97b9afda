import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enrt.estimators import (
    SignFlipWarning,
    SmallSampleWarning,
    adjusted_de,
    adjusted_ie,
    adjusted_ie_rr,
    adjusted_ie_three_level,
    covariance_correction,
    naive_de,
    naive_ie,
    normal_quantile,
    theoretical_naive_bias,
    variance_de,
    variance_ie,
    wald_ci,
    xi_matrix,
)
from enrt.sample import EgocentricSample
from enrt.sensmodel import EdgeProbabilities, ExposureProfile, exposure_profile
from enrt.sim import PotentialOutcomeTable

from oracles import exact_expectation, random_instance


def uniform_profile(n_a, n_e, pi_a, pi_e, p_z=0.5):
    return ExposureProfile(np.full(n_a, pi_a), np.full(n_e, pi_e), p_z)


@pytest.fixture
def two_alters():
    # alters F=(1,0), Y=(3,1); egos Z=(1,0), Y=(2,1)
    return EgocentricSample.from_arrays([0, 1], 2, 0.5, z_ego=[1, 0], y_ego=[2, 1], y_alter=[3, 1])


def test_naive_examples(two_alters):
    assert naive_ie(two_alters).point == pytest.approx(2.0)
    assert naive_de(two_alters).point == pytest.approx(1.0)


def test_zero_outcomes_give_zero():
    s = EgocentricSample.from_arrays([0, 1], 2, 0.5, z_ego=[1, 0])
    assert naive_ie(s).point == 0.0
    assert naive_de(s).point == 0.0


def test_adjusted_ie_example(two_alters):
    est = adjusted_ie(two_alters, uniform_profile(2, 2, 0.6, 0.0))
    assert est.point == pytest.approx(2.5)


def test_adjusted_ie_rejects_certain_exposure(two_alters):
    with pytest.raises(ValueError):
        adjusted_ie(two_alters, uniform_profile(2, 2, 1.0, 0.0))
    with pytest.raises(ValueError):
        adjusted_ie(two_alters, uniform_profile(2, 2, 0.4, 0.0))


def test_adjusted_de_example(two_alters):
    est = adjusted_de(two_alters, uniform_profile(2, 2, 0.5, 0.19), 2.0)
    assert est.point == pytest.approx(1 / 1.19, abs=1e-4)
    assert est.params["kappa"] == 2.0


def test_sign_flip_boundary_raises(two_alters):
    # 1 + 0.5 (kappa - 1) = 0 at kappa = -1
    with pytest.raises(ValueError):
        adjusted_de(two_alters, uniform_profile(2, 2, 0.5, 0.5), -1.0)
    with pytest.warns(SignFlipWarning):
        adjusted_de(two_alters, uniform_profile(2, 2, 0.5, 0.5), -1.5)


def test_variance_ie_examples():
    s = EgocentricSample.from_arrays([0, 0, 1, 1], 2, 0.5, z_ego=[1, 0])
    assert variance_ie(s, np.ones(4)) == 0.0
    # totals T = (6, -2), n_a = 4
    assert variance_ie(s, np.array([4.0, 2.0, -1.0, -1.0])) == pytest.approx(32 / 16)
    single = EgocentricSample.from_arrays([0, 0], 1, 0.5, z_ego=[1])
    with pytest.warns(SmallSampleWarning):
        assert variance_ie(single, np.array([1.0, 3.0])) == 0.0


def test_covariance_correction_example():
    P = np.full((3, 3), 0.5)
    np.fill_diagonal(P, 0.0)
    assert covariance_correction(np.ones(3), P, 0.5) == pytest.approx(1 / 24, rel=1e-14)
    assert covariance_correction(np.ones(3), np.zeros((3, 3)), 0.5) == 0.0


def test_variance_de_no_edges_is_neyman(two_alters):
    ep = EdgeProbabilities(np.zeros((2, 2)), np.array([[np.nan, 0.0], [0.0, np.nan]]))
    r = np.array([4.0, -2.0])
    assert variance_de(two_alters, r, ep, 0.5) == pytest.approx(((3.0**2) * 2) / 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 9))
def test_xi_two_ways(seed, n):
    rng = np.random.default_rng(seed)
    P = np.triu(rng.random((n, n)), 1)
    P = P + P.T
    loop = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                loop[i, j] = sum(P[i, k] * P[j, k] for k in range(n) if k not in (i, j))
    np.testing.assert_allclose(xi_matrix(P), loop, atol=1e-12)
    v = rng.normal(size=n)
    s = np.abs(v)
    direct = sum(loop[i, j] * s[i] * s[j] for i in range(n) for j in range(n) if i != j)
    assert covariance_correction(v, P, 0.3) == pytest.approx(direct * 0.21 / n**2, rel=1e-12, abs=1e-15)


def test_rr_examples():
    s = EgocentricSample.from_arrays([0, 1, 1], 2, 0.5, z_ego=[1, 0], y_alter=[1, 1, 0])
    prof = uniform_profile(3, 2, 0.5, 0.0)
    rr = adjusted_ie_rr(s, prof)
    assert rr.point == pytest.approx(1.0)
    assert rr.variance is None and rr.ci_low is None
    zero = EgocentricSample.from_arrays([0, 1, 1], 2, 0.5, z_ego=[1, 0], y_alter=[0, 1, 0])
    assert adjusted_ie_rr(zero, prof).point == 0.0
    with pytest.raises(ValueError):
        adjusted_ie_rr(EgocentricSample.from_arrays([0], 1, 0.5, z_ego=[1], y_alter=[0.5]), uniform_profile(1, 1, .5, 0))


def test_rr_reduces_to_naive_ratio():
    rng = np.random.default_rng(2)
    ae = rng.integers(0, 6, 15)
    s = EgocentricSample.from_arrays(ae, 6, 0.4, z_ego=[1, 0, 1, 0, 1, 0], y_alter=rng.integers(0, 2, 15))
    f = np.array([1, 0, 1, 0, 1, 0])[ae]
    y = s.y_alter
    naive = (y[f == 1].sum() / 0.4) / (y[f == 0].sum() / 0.6)
    assert adjusted_ie_rr(s, uniform_profile(15, 6, 0.4, 0.0, 0.4)).point == pytest.approx(naive)


def three_level_fixture():
    rng = np.random.default_rng(3)
    ae = rng.integers(0, 5, 9)
    s = EgocentricSample.from_arrays(ae, 5, 0.5, z_ego=[1, 0, 1, 1, 0], y_alter=rng.normal(size=9))
    P = np.triu(rng.random((5, 5)) * 0.5, 1)
    Q = rng.random((9, 5)) * 0.5
    Q[np.arange(9), ae] = np.nan
    return s, exposure_profile(EdgeProbabilities(P + P.T, Q), 0.5, three_level=True)


def test_three_level_delta_zero_matches_two_level():
    s, prof = three_level_fixture()
    a = adjusted_ie_three_level(s, prof, 0.0)
    b = adjusted_ie(s, prof)
    assert a.point == pytest.approx(b.point, abs=1e-12)
    assert a.variance == pytest.approx(b.variance, abs=1e-12)


def test_three_level_naive_offset():
    s, prof = three_level_fixture()
    t = prof.three_level.copy()
    # uniform profile: all alters share the first row
    t[:] = t[0]
    uni = ExposureProfile(prof.pi_a, prof.pi_e, 0.5, t)
    delta = 1 + t[0, 2] / t[0, 1]
    assert adjusted_ie_three_level(s, uni, delta).point == pytest.approx(naive_ie(s).point, abs=1e-12)
    none = ExposureProfile(prof.pi_a, prof.pi_e, 0.5, np.tile([1.0, 0.0, 0.0], (s.n_a, 1)))
    assert adjusted_ie_three_level(s, none, 3.0).point == pytest.approx(naive_ie(s).point)
    with pytest.warns(SignFlipWarning):
        adjusted_ie_three_level(s, uni, -1e6)
    with pytest.raises(ValueError):
        adjusted_ie_three_level(s, uni, -t[0, 0] / t[0, 1])


def test_wald_ci():
    lo, hi = wald_ci(2.0, 0.25, 0.95)
    assert (round(lo, 4), round(hi, 4)) == (1.0200, 2.9800)
    assert wald_ci(1.5, 0.0) == (1.5, 1.5)
    assert normal_quantile(0.5) == pytest.approx(0.6744897501960817, abs=1e-9)
    assert normal_quantile(0.95) == pytest.approx(1.959963984540054, abs=1e-9)


def test_effect_estimate_json(two_alters):
    d = json.loads(json.dumps(naive_ie(two_alters).to_dict()))
    assert set(d) == {"estimand", "point", "variance", "ci_low", "ci_high", "level", "params"}
    assert d["ci_low"] <= d["point"] <= d["ci_high"]


def test_theoretical_bias_examples():
    n_a, n_e = 4, 3
    pot = PotentialOutcomeTable(np.zeros((n_e, 4)), np.column_stack([np.zeros(n_a), np.full(n_a, 2.0)]))
    assert theoretical_naive_bias(pot, uniform_profile(n_a, n_e, 0.5, 0.0), 0.5) == (0.0, 0.0)
    ie_bias, _ = theoretical_naive_bias(pot, uniform_profile(n_a, n_e, 0.595, 0.0), 0.5)
    assert ie_bias == pytest.approx(-0.38)


def test_homogeneous_scaling_and_de_coincidence(two_alters):
    rng = np.random.default_rng(4)
    ae = rng.integers(0, 6, 12)
    s = EgocentricSample.from_arrays(ae, 6, 0.3, z_ego=rng.integers(0, 2, 6), y_ego=rng.normal(size=6),
                                     y_alter=rng.normal(size=12))
    prof = uniform_profile(12, 6, 0.55, 0.2, 0.3)
    assert adjusted_ie(s, prof).point == pytest.approx(0.7 / 0.45 * naive_ie(s).point, rel=1e-12)
    assert adjusted_de(s, prof, 1.0).point == naive_de(s).point
    assert adjusted_de(s, uniform_profile(12, 6, 0.55, 0.0, 0.3), 2.7).point == naive_de(s).point


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-5.0, 5.0))
def test_de_sign_flip_threshold(pi_e, kappa):
    s = EgocentricSample.from_arrays([], 2, 0.5, z_ego=[1, 0], y_ego=[3.0, 1.0])
    boundary = 1 - 1 / pi_e
    if abs(kappa - boundary) < 1e-6:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        adj = adjusted_de(s, uniform_profile(0, 2, 0.5, pi_e), kappa).point
    same = np.sign(adj) == np.sign(naive_de(s).point)
    assert same == (kappa > boundary)


@pytest.mark.parametrize("seed", range(4))
def test_unbiased_by_enumeration(seed):
    inst = random_instance(np.random.default_rng(100 + seed), n_e=7, n_a=9)
    ep = EdgeProbabilities.from_edges(inst.sample, inst.ego_edges(), inst.alter_edges())
    prof = exposure_profile(ep, inst.sample.p_z, three_level=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e_ie, e_de, e_nie, e_nde = exact_expectation(inst, [
            lambda o: adjusted_ie(o, prof).point,
            lambda o: adjusted_de(o, prof, inst.kappa).point,
            lambda o: naive_ie(o).point,
            lambda o: naive_de(o).point,
        ])
    assert e_ie == pytest.approx(inst.ie, abs=1e-10)
    assert e_de == pytest.approx(inst.de, abs=1e-10)
    pot = PotentialOutcomeTable(inst.ego_po, inst.alter_po)
    b_ie, b_de = theoretical_naive_bias(pot, prof, inst.sample.p_z)
    assert e_nie - inst.ie == pytest.approx(b_ie, abs=1e-10)
    assert e_nde - inst.de == pytest.approx(b_de, abs=1e-10)


def test_naive_ie_biased_toward_null():
    rng = np.random.default_rng(8)
    for _ in range(3):
        inst = random_instance(rng, n_e=6, n_a=8)
        inst.alter_po[:, 1] = inst.alter_po[:, 0] + rng.uniform(0, 2, 8)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            (e,) = exact_expectation(inst, [lambda o: naive_ie(o).point])
        assert 0.0 <= e <= inst.ie + 1e-12


def test_naive_ie_monte_carlo_matches_bias():
    inst = random_instance(np.random.default_rng(9), n_e=6, n_a=8)
    s = inst.sample
    ep = EdgeProbabilities.from_edges(s, inst.ego_edges(), inst.alter_edges())
    prof = exposure_profile(ep, s.p_z)
    b_ie, _ = theoretical_naive_bias(PotentialOutcomeTable(inst.ego_po, inst.alter_po), prof, s.p_z)
    rng = np.random.default_rng(10)
    Z = (rng.random((100_000, s.n_e)) < s.p_z).astype(int)
    f_obs = Z[:, s.alter_ego]
    f_true = ((f_obs + Z @ inst.A_ae.T) > 0).astype(int)
    y = inst.alter_po[np.arange(s.n_a), f_true]
    r = np.where(f_obs == 1, y / s.p_z, -y / (1 - s.p_z)).mean(axis=1)
    se = r.std(ddof=1) / np.sqrt(len(r))
    assert abs(r.mean() - (inst.ie + b_ie)) < 3 * se


def test_de_variance_conservative():
    inst = random_instance(np.random.default_rng(12), n_e=40, n_a=60, edge_p=0.05)
    s = inst.sample
    ep = EdgeProbabilities.from_edges(s, inst.ego_edges(), inst.alter_edges())
    prof = exposure_profile(ep, s.p_z)
    rng = np.random.default_rng(13)
    pts, var = [], []
    for _ in range(5000):
        z = (rng.random(s.n_e) < s.p_z).astype(float)
        f_e = (inst.A_ee @ z > 0).astype(int)
        y = np.empty(s.n)
        y[s.ego_index] = inst.ego_po[np.arange(s.n_e), 2 * z.astype(int) + f_e]
        y[s.alter_index] = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            e = adjusted_de(s.with_data(z_ego=z, y=y), prof, inst.kappa)
        pts.append(e.point)
        var.append(e.variance)
    assert np.mean(var) >= np.var(pts, ddof=1)


def test_small_sample_warning_still_returns():
    s = EgocentricSample.from_arrays([0, 1], 2, 0.5, z_ego=[1, 1], y_ego=[1, 2], y_alter=[1, 2])
    with pytest.warns(SmallSampleWarning):
        assert naive_de(s).point == pytest.approx(3.0)

import warnings

import numpy as np
import pytest

from enrt.estimators import adjusted_de, adjusted_ie, cluster_variance, covariance_correction
from enrt.outcome import (
    ConvergenceWarning,
    CrossFitPlan,
    CrossFitPredictions,
    OutcomeModelSpec,
    augmented_estimates,
    crossfit_predictions,
    fit_outcome_model,
    make_crossfit_plan,
    unit_features,
)
from enrt.sample import EgocentricSample
from enrt.sensmodel import EdgeProbabilities, EdgeProbabilityModel, build_edge_probabilities, exposure_profile

from oracles import exact_expectation, random_instance


def test_ols_matches_normal_equations():
    X = np.array([[0.5], [1.5], [-1.0], [2.0], [0.0]])
    ind = np.array([0, 1, 0, 1, 1.0])
    y = np.array([1.0, 3.2, -0.4, 4.1, 1.9])
    D = np.column_stack([np.ones(5), ind, X])
    beta = np.linalg.solve(D.T @ D, D.T @ y)
    m = fit_outcome_model("linear", X, ind, y)
    np.testing.assert_allclose(m.coef, beta, rtol=1e-12)
    np.testing.assert_allclose(m.predict(X, ind), D @ beta, rtol=1e-12)


def test_rank_deficient_design_uses_ridge():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0], [0.0, 0.0]])
    ind = np.array([0, 1, 0, 1, 0.0])
    y = X[:, 0] + ind
    m = fit_outcome_model("linear", X, ind, y)
    np.testing.assert_allclose(m.predict(X, ind), y, atol=1e-5)


def test_too_few_rows():
    with pytest.raises(ValueError):
        fit_outcome_model("linear", np.zeros((2, 3)), np.array([0, 1.0]), np.zeros(2))


def test_logistic_symmetric_intercept_zero():
    ind = np.array([0, 0, 1, 1, 0, 0, 1, 1.0])
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1.0])
    m = fit_outcome_model("logistic", np.zeros((8, 0)), ind, y)
    assert m.family == "logistic"
    np.testing.assert_allclose(m.coef, 0.0, atol=1e-10)


def test_logistic_matches_known_mle():
    # saturated in the indicator: fitted probabilities equal cell means
    ind = np.array([0, 0, 0, 0, 1, 1, 1, 1.0])
    y = np.array([0, 0, 0, 1, 0, 1, 1, 1.0])
    m = fit_outcome_model("logistic", np.zeros((8, 0)), ind, y)
    np.testing.assert_allclose(m.predict(np.zeros((2, 0)), np.array([0.0, 1.0])), [0.25, 0.75], atol=1e-10)


def test_logistic_separation_falls_back():
    x = np.linspace(-2, 2, 12)[:, None]
    y = (x[:, 0] > 0).astype(float)
    with pytest.warns(ConvergenceWarning):
        m = fit_outcome_model("logistic", x, np.zeros(12), y)
    assert m.family == "linear" and m.requested_family == "logistic"


def test_logistic_requires_binary():
    with pytest.raises(ValueError):
        fit_outcome_model("logistic", np.zeros((4, 0)), np.array([0, 1, 0, 1.0]), np.array([0, 0.5, 1, 1]))


def sample_with_data(seed=0, n_e=20, per=2, noise=1.0):
    rng = np.random.default_rng(seed)
    ae = np.repeat(np.arange(n_e), per)
    Xe, Xa = rng.normal(size=(n_e, 2)), rng.normal(size=(n_e * per, 2))
    z = (rng.random(n_e) < 0.5).astype(float)
    ye = 1 + 2 * z + Xe @ [1.0, -1.0] + noise * rng.normal(size=n_e)
    ya = 0.5 + z[ae] + Xa @ [0.5, 1.0] + noise * rng.normal(size=n_e * per)
    return EgocentricSample.from_arrays(ae, n_e, 0.5, z, ye, ya, Xe, Xa)


def test_plan_deterministic_and_valid():
    s = sample_with_data()
    a, b = make_crossfit_plan(s, 42), make_crossfit_plan(s, 42)
    np.testing.assert_array_equal(a.folds, b.folds)
    assert set(a.folds) == {0, 1}


def test_plan_two_egos():
    s = EgocentricSample.from_arrays([0, 1], 2, 0.5)
    for seed in range(20):
        assert sorted(make_crossfit_plan(s, seed).folds) == [0, 1]


def test_plan_impossible():
    s = EgocentricSample.from_arrays([0, 0], 2, 0.5)
    with pytest.raises(ValueError):
        make_crossfit_plan(s, 0)
    with pytest.raises(ValueError):
        make_crossfit_plan(EgocentricSample.from_arrays([0], 1, 0.5), 0)


def test_fold_sizes_average_half():
    s = EgocentricSample.from_arrays(np.arange(30), 30, 0.5)
    sizes = np.array([make_crossfit_plan(s, seed).folds.sum() for seed in range(10_000)])
    se = np.sqrt(30 * 0.25 / len(sizes))
    assert abs(sizes.mean() - 15) < 3 * se


def test_neighbor_average_features():
    s = EgocentricSample.from_arrays([0, 0], 2, 0.5, X_ego=np.array([[1.0], [2.0]]), X_alter=np.array([[4.0], [6.0]]))
    fe, fa = unit_features(s, OutcomeModelSpec(neighbor_averages=True))
    np.testing.assert_array_equal(fe, [[1.0, 5.0], [2.0, 0.0]])
    np.testing.assert_array_equal(fa, [[4.0, 1.0], [6.0, 1.0]])
    with pytest.raises(ValueError):
        unit_features(s, OutcomeModelSpec(covariates=("nope",)))


def contaminated_profile(s, m_e=8.0, m_a=10.0):
    return exposure_profile(build_edge_probabilities(EdgeProbabilityModel.homogeneous_count(m_e, m_a), s), s.p_z)


def test_zero_models_equal_foldwise_adjusted():
    s = sample_with_data(1)
    prof = contaminated_profile(s)
    plan = make_crossfit_plan(s, 3)
    ie, de = augmented_estimates(s, prof, 1.5, predictions=CrossFitPredictions.zeros(s, plan))
    assert ie.point == pytest.approx(adjusted_ie(s, prof).point, rel=1e-12)
    assert de.point == pytest.approx(adjusted_de(s, prof, 1.5).point, rel=1e-12)
    # variance: per-fold formulas recombined by hand
    f = s.z_ego[s.alter_ego]
    r_a = (0.5 / (1 - prof.pi_a)) * np.where(f == 1, s.y_alter / 0.5, -s.y_alter / 0.5)
    r_e = np.where(s.z_ego == 1, s.y_ego / 0.5, -s.y_ego / 0.5) / (1 + prof.pi_e * 0.5)
    v_ie = v_de = 0.0
    for q in (0, 1):
        eg = np.flatnonzero(plan.folds == q)
        al = np.flatnonzero(plan.folds[s.alter_ego] == q)
        dense = {e: k for k, e in enumerate(eg)}
        v_ie += (len(al) / s.n_a) ** 2 * cluster_variance(r_a[al], np.array([dense[e] for e in s.alter_ego[al]]),
                                                          len(eg), len(al))
        dev = r_e[eg] - r_e[eg].mean()
        v_q = (dev**2).sum() / len(eg) ** 2 + covariance_correction(dev, prof.edges.ego_ego[np.ix_(eg, eg)], 0.5)
        v_de += (len(eg) / s.n_e) ** 2 * v_q
    assert ie.variance == pytest.approx(v_ie, rel=1e-12)
    assert de.variance == pytest.approx(v_de, rel=1e-12)


def test_perfect_model_zero_variance():
    s = sample_with_data(2, noise=0.0)
    prof = contaminated_profile(s, 0.0, 0.0)
    ie, de = augmented_estimates(s, prof, 1.0, OutcomeModelSpec(), make_crossfit_plan(s, 1))
    assert ie.variance == pytest.approx(0.0, abs=1e-20)
    assert de.variance == pytest.approx(0.0, abs=1e-20)
    assert ie.point == pytest.approx(1.0, abs=1e-9)
    assert de.point == pytest.approx(2.0, abs=1e-9)


def test_fold_swap_symmetry():
    s = sample_with_data(3)
    prof = contaminated_profile(s)
    plan = make_crossfit_plan(s, 5)
    a = augmented_estimates(s, prof, 1.3, OutcomeModelSpec(), plan)
    b = augmented_estimates(s, prof, 1.3, OutcomeModelSpec(), plan.swapped())
    for x, y in zip(a, b):
        assert x.point == pytest.approx(y.point, rel=1e-12)
        assert x.variance == pytest.approx(y.variance, rel=1e-12)


def test_empty_arm_falls_back_with_warning():
    s = sample_with_data(4, n_e=8)
    z = np.array([1, 1, 1, 1, 0, 0, 0, 0.0])
    plan = CrossFitPlan(np.array([0, 0, 0, 0, 1, 1, 1, 1]), 0)
    s = s.with_data(z_ego=z)
    with pytest.warns(UserWarning):
        preds = crossfit_predictions(s, OutcomeModelSpec(), plan)
    assert preds.notes
    np.testing.assert_array_equal(preds.mu_e0, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_augmented_exactly_unbiased_with_fixed_models(seed):
    rng = np.random.default_rng(200 + seed)
    inst = random_instance(rng, n_e=7, n_a=10)
    s = inst.sample
    ep = EdgeProbabilities.from_edges(s, inst.ego_edges(), inst.alter_edges())
    prof = exposure_profile(ep, s.p_z)
    plan = CrossFitPlan(np.array([0, 1, 0, 1, 0, 1, 1]), 0)
    preds = CrossFitPredictions(plan, rng.normal(size=10), rng.normal(size=10), rng.normal(size=7), rng.normal(size=7))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e_ie, e_de = exact_expectation(inst, [
            lambda o: augmented_estimates(o, prof, inst.kappa, predictions=preds)[0].point,
            lambda o: augmented_estimates(o, prof, inst.kappa, predictions=preds)[1].point,
        ])
    assert e_ie == pytest.approx(inst.ie, abs=1e-8)
    assert e_de == pytest.approx(inst.de, abs=1e-8)

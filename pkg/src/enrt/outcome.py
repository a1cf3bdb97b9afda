"""Outcome regressions and two-fold cross-fitted augmented estimators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import expit

from . import seeding
from .estimators import (
    EffectEstimate,
    KappaSpec,
    SmallSampleWarning,
    _finish,
    alter_weights,
    check_kappa,
    cluster_variance,
    covariance_correction,
    ego_weights,
    ht_terms,
)
from .sample import EgocentricSample, observed_exposures
from .sensmodel import ExposureProfile

Family = Literal["linear", "logistic"]


class ConvergenceWarning(UserWarning):
    """Logistic fit failed or separated; a linear fit was used instead."""


@dataclass(frozen=True)
class OutcomeModelSpec:
    family: Family = "linear"
    covariates: tuple[str, ...] | None = None
    neighbor_averages: bool = False

    def __post_init__(self) -> None:
        if self.family not in ("linear", "logistic"):
            raise ValueError(f"unknown outcome family {self.family!r}")
        if self.covariates is not None:
            object.__setattr__(self, "covariates", tuple(self.covariates))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "covariates": None if self.covariates is None else list(self.covariates),
            "neighbor_averages": self.neighbor_averages,
        }


@dataclass(frozen=True, eq=False)
class FittedOutcomeModel:
    """Regression of Y on (1, indicator, features); predicts on the mean scale."""

    coef: np.ndarray
    family: Family
    requested_family: Family
    notes: tuple[str, ...] = ()

    def predict(self, features: np.ndarray, indicator: float | np.ndarray) -> np.ndarray:
        features = np.atleast_2d(features)
        ind = np.broadcast_to(np.asarray(indicator, float), (features.shape[0],))
        eta = self.coef[0] + self.coef[1] * ind + features @ self.coef[2:]
        return expit(eta) if self.family == "logistic" else eta


def _design(features: np.ndarray, indicator: np.ndarray) -> np.ndarray:
    n = len(indicator)
    return np.column_stack([np.ones(n), indicator, np.asarray(features, float).reshape(n, -1)])


def _solve_normal(X: np.ndarray, XtX: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    p = XtX.shape[0]
    if np.linalg.matrix_rank(X) < p:
        lam = 1e-8 * np.trace(XtX) / p
        XtX = XtX + lam * np.eye(p)
    return np.linalg.solve(XtX, rhs)


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _solve_normal(X, X.T @ X, X.T @ y)


def _irls(X: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 50) -> tuple[np.ndarray, str]:
    """Newton-Raphson / IRLS for the logistic likelihood. Returns (coef, status)."""
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu)
        if np.linalg.norm(grad) < tol:
            if np.abs(y - mu).max() < 1e-6:
                return beta, "separated"
            return beta, "converged"
        w = mu * (1.0 - mu)
        H = X.T @ (X * w[:, None])
        try:
            step = _solve_normal(X * np.sqrt(w)[:, None], H, grad)
        except np.linalg.LinAlgError:
            return beta, "singular"
        beta = beta + step
        if not np.isfinite(beta).all() or np.linalg.norm(beta) > 1e3:
            return beta, "separated"
    return beta, "not converged"


def fit_outcome_model(
    spec: OutcomeModelSpec | Family,
    features: np.ndarray,
    indicator: np.ndarray,
    y: np.ndarray,
) -> FittedOutcomeModel:
    """Fit Y ~ indicator + features by OLS or logistic IRLS.

    Rank-deficient designs get a tiny ridge; a separated or non-converging
    logistic fit falls back to OLS with a ConvergenceWarning.
    """
    family = spec.family if isinstance(spec, OutcomeModelSpec) else spec
    y = np.asarray(y, float)
    X = _design(features, np.asarray(indicator, float))
    if X.shape[0] < X.shape[1]:
        raise ValueError(f"need at least {X.shape[1]} rows to fit {X.shape[1]} coefficients, got {X.shape[0]}")
    if family == "logistic":
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("logistic outcome model needs 0/1 outcomes")
        beta, status = _irls(X, y)
        if status == "converged":
            return FittedOutcomeModel(beta, "logistic", "logistic")
        note = f"logistic fit {status}; using linear model"
        warnings.warn(note, ConvergenceWarning, stacklevel=2)
        return FittedOutcomeModel(_ols(X, y), "linear", "logistic", (note,))
    return FittedOutcomeModel(_ols(X, y), "linear", "linear")


def unit_features(s: EgocentricSample, spec: OutcomeModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrices (egos, alters) under the model's covariate recipe.

    Neighbour averages use the observed network: an alter's neighbour is its
    ego; an ego's is the mean over its alters (zeros when it has none).
    """
    if spec.covariates is None:
        cols = list(range(s.X.shape[1]))
    else:
        missing = [c for c in spec.covariates if c not in s.covariate_names]
        if missing:
            raise ValueError(f"unknown covariates {missing}")
        cols = [s.covariate_names.index(c) for c in spec.covariates]
    Xe = s.X_ego[:, cols]
    Xa = s.X_alter[:, cols]
    if not spec.neighbor_averages:
        return Xe, Xa
    counts = s.alters_per_ego()
    sums = np.zeros_like(Xe)
    np.add.at(sums, s.alter_ego, Xa)
    ego_nb = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    alter_nb = Xe[s.alter_ego]
    return np.hstack([Xe, ego_nb]), np.hstack([Xa, alter_nb])


@dataclass(frozen=True)
class CrossFitPlan:
    """Fold (0 or 1) of each ego-network, indexed by ego position."""

    folds: np.ndarray
    seed: int

    def swapped(self) -> "CrossFitPlan":
        return CrossFitPlan(1 - self.folds, self.seed)


def make_crossfit_plan(
    s: EgocentricSample, seed: int, max_tries: int = 1000, rep: int | None = None
) -> CrossFitPlan:
    """Assign each ego-network to a fold by a fair coin, redrawing until both
    folds hold at least one ego and one alter.

    ``rep`` selects an independent stream under the same seed (one per replication).
    """
    if s.n_e < 2:
        raise ValueError("cross-fitting needs at least two ego-networks")
    counts = s.alters_per_ego()
    if (counts > 0).sum() < 2:
        raise ValueError("cross-fitting needs alters in at least two ego-networks")
    rng = seeding.stream(seed, seeding.CROSSFIT, *(() if rep is None else (rep,)))
    for _ in range(max_tries):
        folds = rng.integers(0, 2, size=s.n_e)
        ok = all(
            (folds == q).any() and counts[folds == q].sum() > 0 for q in (0, 1)
        )
        if ok:
            return CrossFitPlan(folds, seed)
    raise ValueError(f"no valid split found in {max_tries} draws")


@dataclass(frozen=True, eq=False)
class CrossFitPredictions:
    """Out-of-fold predictions mu_a(0), mu_a(1) per alter and mu_e(0), mu_e(1) per ego."""

    plan: CrossFitPlan
    mu_a0: np.ndarray
    mu_a1: np.ndarray
    mu_e0: np.ndarray
    mu_e1: np.ndarray
    notes: tuple[str, ...] = field(default=())

    @classmethod
    def zeros(cls, s: EgocentricSample, plan: CrossFitPlan) -> "CrossFitPredictions":
        za, ze = np.zeros(s.n_a), np.zeros(s.n_e)
        return cls(plan, za, za.copy(), ze, ze.copy())


def _fit_or_skip(spec, feats, ind, y, label, notes) -> FittedOutcomeModel | None:
    if len(y) == 0 or ind.min() == ind.max():
        notes.append(f"{label}: training fold lacks one arm; HT-only for this fold")
        warnings.warn(notes[-1], SmallSampleWarning, stacklevel=3)
        return None
    if len(y) < feats.shape[1] + 2:
        notes.append(f"{label}: {len(y)} rows for {feats.shape[1] + 2} coefficients; HT-only for this fold")
        warnings.warn(notes[-1], SmallSampleWarning, stacklevel=3)
        return None
    model = fit_outcome_model(spec, feats, ind, y)
    notes.extend(model.notes)
    return model


def crossfit_predictions(
    s: EgocentricSample,
    spec: OutcomeModelSpec,
    plan: CrossFitPlan,
    features: tuple[np.ndarray, np.ndarray] | None = None,
) -> CrossFitPredictions:
    """Fit on each fold's complement and predict both arms on the fold."""
    Fe, Fa = unit_features(s, spec) if features is None else features
    z = s.z_ego
    f = z[s.alter_ego]
    alter_fold = plan.folds[s.alter_ego]
    out = CrossFitPredictions.zeros(s, plan)
    notes: list[str] = []
    for q in (0, 1):
        train_e = plan.folds != q
        train_a = alter_fold != q
        pred_e = ~train_e
        pred_a = ~train_a
        m_a = _fit_or_skip(spec, Fa[train_a], f[train_a], s.y_alter[train_a], f"alters fold {q}", notes)
        if m_a is not None:
            out.mu_a0[pred_a] = m_a.predict(Fa[pred_a], 0.0)
            out.mu_a1[pred_a] = m_a.predict(Fa[pred_a], 1.0)
        m_e = _fit_or_skip(spec, Fe[train_e], z[train_e], s.y_ego[train_e], f"egos fold {q}", notes)
        if m_e is not None:
            out.mu_e0[pred_e] = m_e.predict(Fe[pred_e], 0.0)
            out.mu_e1[pred_e] = m_e.predict(Fe[pred_e], 1.0)
    return CrossFitPredictions(plan, out.mu_a0, out.mu_a1, out.mu_e0, out.mu_e1, tuple(notes))


def augmented_kernel(
    plan_folds: np.ndarray,
    alter_ego: np.ndarray,
    f_alter: np.ndarray,
    y_alter: np.ndarray,
    z_ego: np.ndarray,
    y_ego: np.ndarray,
    preds: CrossFitPredictions,
    w_a: np.ndarray,
    w_e: np.ndarray,
    rho_e: np.ndarray | None,
    p_z: float,
) -> tuple[float, float, float, float]:
    """(IE point, IE variance, DE point, DE variance) of the augmented estimators."""
    n_e, n_a = len(z_ego), len(y_alter)
    mu_a_obs = np.where(f_alter == 1, preds.mu_a1, preds.mu_a0)
    D_a = ht_terms(f_alter, y_alter - mu_a_obs, p_z)
    mu_e_obs = np.where(z_ego == 1, preds.mu_e1, preds.mu_e0)
    D_e = ht_terms(z_ego, y_ego - mu_e_obs, p_z)
    resid_a = w_a * D_a
    full_a = resid_a + w_a * (preds.mu_a1 - preds.mu_a0)
    resid_e = w_e * D_e
    full_e = resid_e + w_e * (preds.mu_e1 - preds.mu_e0)
    alter_fold = plan_folds[alter_ego]

    ie = ie_var = de = de_var = 0.0
    for q in (0, 1):
        ea = alter_fold == q
        ee = plan_folds == q
        na_q, ne_q = int(ea.sum()), int(ee.sum())
        if na_q:
            ie += full_a[ea].sum() / n_a
            # cluster totals over the fold's ego-networks, re-indexed densely
            eg = np.flatnonzero(ee)
            dense = np.full(n_e, -1)
            dense[eg] = np.arange(ne_q)
            v_q = cluster_variance(resid_a[ea], dense[alter_ego[ea]], ne_q, na_q)
            ie_var += (na_q / n_a) ** 2 * v_q
        if ne_q:
            de += full_e[ee].sum() / n_e
            r = resid_e[ee]
            dev = r - r.mean()
            v_q = float((dev**2).sum()) / ne_q**2
            if rho_e is not None:
                # shared latent neighbours counted within the fold only
                v_q += covariance_correction(dev, rho_e[np.ix_(ee, ee)], p_z, ne_q)
            de_var += (ne_q / n_e) ** 2 * v_q
    return float(ie), float(ie_var), float(de), float(de_var)


def augmented_estimates(
    s: EgocentricSample,
    prof: ExposureProfile,
    k: KappaSpec | float,
    spec: OutcomeModelSpec | None = None,
    plan: CrossFitPlan | None = None,
    predictions: CrossFitPredictions | None = None,
    level: float = 0.95,
) -> tuple[EffectEstimate, EffectEstimate]:
    """Cross-fitted augmented, contamination-corrected IE and DE.

    Pass ``predictions`` to reuse outcome models across sensitivity values;
    otherwise they are fitted here from ``spec`` and ``plan``.
    """
    kappa = k.kappa if isinstance(k, KappaSpec) else float(k)
    if predictions is None:
        if spec is None or plan is None:
            raise ValueError("need either predictions or both spec and plan")
        predictions = crossfit_predictions(s, spec, plan)
    folds = predictions.plan.folds
    if s.n_a == 0:
        raise ValueError("indirect-effect estimation needs at least one alter")
    pi_e = np.asarray(prof.pi_e, float)
    check_kappa(pi_e, kappa)
    f = observed_exposures(s).alters(s)
    ep = prof.edges
    ie, ie_var, de, de_var = augmented_kernel(
        folds, s.alter_ego, f, s.y_alter, s.z_ego, s.y_ego, predictions,
        alter_weights(np.asarray(prof.pi_a, float), s.p_z), ego_weights(pi_e, kappa),
        None if ep is None else ep.ego_ego, s.p_z,
    )
    base = {"adjusted": True, "augmented": True, "crossfit_seed": predictions.plan.seed}
    return (
        _finish("IE", ie, ie_var, level, dict(base)),
        _finish("DE", de, de_var, level, dict(base, kappa=kappa)),
    )

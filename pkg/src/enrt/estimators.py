"""Horvitz-Thompson effect estimators for ENRTs, naive and contamination-corrected."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import TYPE_CHECKING, Any

import numpy as np

from .sample import EgocentricSample, observed_exposures
from .sensmodel import PI_CAP, EdgeProbabilities, ExposureProfile

if TYPE_CHECKING:
    from .sim import PotentialOutcomeTable

ESTIMANDS = ("IE", "DE", "IE_RR", "IE_3L")


class SmallSampleWarning(UserWarning):
    """A stratum is empty or there is no between-cluster variation."""


class SignFlipWarning(UserWarning):
    """The sensitivity parameters sit in a degenerate-weight region."""


@dataclass(frozen=True)
class EffectEstimate:
    estimand: str
    point: float
    variance: float | None
    ci_low: float | None
    ci_high: float | None
    level: float
    params: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimand": self.estimand,
            "point": self.point,
            "variance": self.variance,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "params": dict(self.params),
        }


@dataclass(frozen=True)
class KappaSpec:
    kappa: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.kappa):
            raise ValueError("kappa must be finite")


@dataclass(frozen=True)
class DeltaSpec:
    delta: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")


def normal_quantile(level: float) -> float:
    """Two-sided critical value z_{1 - alpha/2} for a ``level`` interval."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def wald_ci(point: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    half = normal_quantile(level) * math.sqrt(variance)
    return point - half, point + half


# --- array kernels -------------------------------------------------------
# Shared by the sample-level estimators and the simulation loop.


def ht_terms(indicator: np.ndarray, y: np.ndarray, p_z: float) -> np.ndarray:
    """Per-unit HT contrast 1{ind=1}Y/p_z - 1{ind=0}Y/(1-p_z)."""
    return np.where(indicator == 1, y / p_z, -y / (1.0 - p_z))


def alter_weights(pi_a: np.ndarray, p_z: float) -> np.ndarray:
    return (1.0 - p_z) / (1.0 - np.minimum(pi_a, PI_CAP))


def ego_weights(pi_e: np.ndarray, kappa: float) -> np.ndarray:
    return 1.0 / (1.0 + pi_e * (kappa - 1.0))


def cluster_variance(terms: np.ndarray, cluster: np.ndarray, n_clusters: int, n_units: int) -> float:
    """(1/n_units^2) * sum over clusters of (T_c - mean T)^2 with T_c the cluster totals."""
    if n_units == 0 or n_clusters == 0:
        return 0.0
    T = np.bincount(cluster, weights=terms, minlength=n_clusters)
    return float(((T - T.mean()) ** 2).sum() / n_units**2)


def covariance_correction(resid: np.ndarray, rho_e: np.ndarray | None, p_z: float, n: int | None = None) -> float:
    """Conservative shared-neighbour covariance term for DE variance.

    p_z(1-p_z)/n^2 * sum_{i != j} xi_ij sqrt(v_i v_j), xi_ij = sum_{k != i,j} rho_ik rho_jk,
    v_i = resid_i^2. ``rho_e`` is the probability matrix among the egos in
    ``resid`` (zero diagonal, so (P P^T)_ij carries no k in {i, j} terms).
    """
    if rho_e is None or resid.size == 0:
        return 0.0
    n = len(resid) if n is None else n
    s = np.abs(resid)
    Ps = rho_e.T @ s
    diag = (rho_e**2).sum(axis=1)
    total = float(Ps @ Ps - (diag * s**2).sum())
    return max(total, 0.0) * p_z * (1.0 - p_z) / n**2


def xi_matrix(rho_e: np.ndarray) -> np.ndarray:
    """Expected shared latent ego neighbours per ego pair, zero diagonal."""
    xi = rho_e @ rho_e.T
    np.fill_diagonal(xi, 0.0)
    return xi


def neyman_variance(terms: np.ndarray) -> float:
    n = len(terms)
    if n == 0:
        return 0.0
    return float(((terms - terms.mean()) ** 2).sum() / n**2)


# --- sample-level estimators ---------------------------------------------


def _finish(estimand: str, point: float, variance: float | None, level: float, params: dict) -> EffectEstimate:
    if variance is None:
        return EffectEstimate(estimand, point, None, None, None, level, params)
    lo, hi = wald_ci(point, variance, level)
    return EffectEstimate(estimand, point, variance, lo, hi, level, params)


def _alter_terms(s: EgocentricSample) -> np.ndarray:
    if s.n_a == 0:
        raise ValueError("indirect-effect estimation needs at least one alter")
    f = observed_exposures(s).alters(s)
    if f.min() == f.max():
        warnings.warn("all alters share one observed exposure level", SmallSampleWarning, stacklevel=3)
    if s.n_e == 1:
        warnings.warn("a single ego-network gives no between-cluster variation", SmallSampleWarning, stacklevel=3)
    return ht_terms(f, s.y_alter, s.p_z)


def _ego_terms(s: EgocentricSample) -> np.ndarray:
    if s.n_e == 0:
        raise ValueError("direct-effect estimation needs at least one ego")
    z = s.z_ego
    if np.isnan(z).any():
        raise ValueError("every ego needs a treatment")
    if z.min() == z.max():
        warnings.warn("all egos share one treatment arm", SmallSampleWarning, stacklevel=3)
    return ht_terms(z, s.y_ego, s.p_z)


def variance_ie(s: EgocentricSample, summands: np.ndarray) -> float:
    """Ego-network cluster variance of an IE estimator from its per-alter summands."""
    if s.n_e == 1:
        warnings.warn("a single ego-network gives no between-cluster variation", SmallSampleWarning, stacklevel=2)
    return cluster_variance(np.asarray(summands, float), s.alter_ego, s.n_e, s.n_a)


def variance_de(s: EgocentricSample, summands: np.ndarray, ep: EdgeProbabilities | None, p_z: float) -> float:
    """Neyman variance plus the conservative latent-neighbour covariance correction."""
    r = np.asarray(summands, float)
    resid = r - r.mean()
    return neyman_variance(r) + covariance_correction(resid, None if ep is None else ep.ego_ego, p_z)


def naive_ie(s: EgocentricSample, level: float = 0.95) -> EffectEstimate:
    r = _alter_terms(s)
    return _finish("IE", float(r.mean()), variance_ie(s, r), level, {"adjusted": False})


def naive_de(s: EgocentricSample, level: float = 0.95) -> EffectEstimate:
    r = _ego_terms(s)
    return _finish("DE", float(r.mean()), neyman_variance(r), level, {"adjusted": False})


def adjusted_ie(s: EgocentricSample, prof: ExposureProfile, level: float = 0.95) -> EffectEstimate:
    pi_a = np.asarray(prof.pi_a, float)
    if (pi_a >= 1.0).any():
        raise ValueError("alter exposure probability of 1 makes the IE correction undefined")
    if (pi_a < s.p_z - 1e-12).any():
        raise ValueError("alter exposure probabilities must be >= p_z")
    r = alter_weights(pi_a, s.p_z) * _alter_terms(s)
    return _finish("IE", float(r.mean()), variance_ie(s, r), level, {"adjusted": True})


def check_kappa(pi_e: np.ndarray, kappa: float) -> None:
    denom = 1.0 + pi_e * (kappa - 1.0)
    if (denom == 0.0).any():
        raise ValueError(f"kappa={kappa} puts an ego exactly on the sign-flip boundary")
    pmax = float(pi_e.max()) if pi_e.size else 0.0
    if pmax > 0 and kappa <= 1.0 - 1.0 / pmax:
        warnings.warn(
            f"kappa={kappa} <= 1 - 1/max(pi_e) = {1.0 - 1.0 / pmax:.6g}: corrected DE changes sign",
            SignFlipWarning,
            stacklevel=3,
        )


def adjusted_de(
    s: EgocentricSample, prof: ExposureProfile, k: KappaSpec | float, level: float = 0.95
) -> EffectEstimate:
    kappa = k.kappa if isinstance(k, KappaSpec) else float(k)
    pi_e = np.asarray(prof.pi_e, float)
    check_kappa(pi_e, kappa)
    r = ego_weights(pi_e, kappa) * _ego_terms(s)
    ep = prof.edges
    var = variance_de(s, r, ep, s.p_z)
    params = {"adjusted": True, "kappa": kappa}
    if ep is not None:
        params["max_expected_degree"] = ep.max_expected_degree()
    return _finish("DE", float(r.mean()), var, level, params)


def adjusted_ie_rr(s: EgocentricSample, prof: ExposureProfile, level: float = 0.95) -> EffectEstimate:
    """Relative-risk IE with the unexposed-risk total bias-corrected. No variance."""
    if s.n_a == 0:
        raise ValueError("indirect-effect estimation needs at least one alter")
    y = s.y_alter
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("relative-risk estimator needs binary 0/1 outcomes")
    f = observed_exposures(s).alters(s)
    p = s.p_z
    pi_a = np.minimum(np.asarray(prof.pi_a, float), PI_CAP)
    exposed = np.where(f == 1, y / p, 0.0)
    unexposed = np.where(f == 0, y / (1.0 - p), 0.0)
    num = float(exposed.sum())
    den = float((((1.0 - p) / (1.0 - pi_a)) * unexposed - ((pi_a - p) / (1.0 - pi_a)) * exposed).sum())
    if den == 0.0:
        raise ValueError("relative-risk denominator is zero")
    return EffectEstimate("IE_RR", num / den, None, None, None, level, {"adjusted": True})


def three_level_weights(three_level: np.ndarray, delta: float) -> np.ndarray:
    denom = three_level[:, 0] + three_level[:, 1] * delta
    if (denom == 0).any():
        raise ValueError(f"delta={delta} gives a zero three-level weight denominator")
    if (denom < 0).any():
        warnings.warn(f"delta={delta} gives a negative three-level weight for some alters", SignFlipWarning,
                      stacklevel=3)
    return 1.0 / denom


def adjusted_ie_three_level(
    s: EgocentricSample, prof: ExposureProfile, d: DeltaSpec | float, level: float = 0.95
) -> EffectEstimate:
    if prof.three_level is None:
        raise ValueError("exposure profile has no three-level probabilities")
    delta = d.delta if isinstance(d, DeltaSpec) else float(d)
    w = three_level_weights(np.asarray(prof.three_level, float), delta)
    r = w * _alter_terms(s)
    return _finish("IE_3L", float(r.mean()), variance_ie(s, r), level, {"adjusted": True, "delta": delta})


def theoretical_naive_bias(pot: "PotentialOutcomeTable", prof: ExposureProfile, p_z: float) -> tuple[float, float]:
    """Closed-form expected bias of the naive IE and DE given all potential outcomes.

    Alter columns are (Y(0,0), Y(0,1)); ego columns (Y(0,0), Y(0,1), Y(1,0), Y(1,1)).
    """
    a = np.asarray(pot.alter, float)
    e = np.asarray(pot.ego, float)
    pi_a = np.asarray(prof.pi_a, float)
    pi_e = np.asarray(prof.pi_e, float)
    ie_bias = float(np.mean((p_z - pi_a) / (1.0 - p_z) * (a[:, 1] - a[:, 0]))) if len(a) else 0.0
    interaction = (e[:, 3] - e[:, 1]) - (e[:, 2] - e[:, 0])
    de_bias = float(np.mean(pi_e * interaction)) if len(e) else 0.0
    return ie_bias, de_bias

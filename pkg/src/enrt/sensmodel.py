"""Latent-edge sensitivity models and the exposure probabilities they imply."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any, Literal, Sequence

import numpy as np
from scipy.special import expit, logit

from .sample import EgocentricSample

Variant = Literal["homogeneous_prob", "homogeneous_count", "heterogeneous_prob", "heterogeneous_count"]
VARIANTS: tuple[str, ...] = ("homogeneous_prob", "homogeneous_count", "heterogeneous_prob", "heterogeneous_count")

# Weight cap for alters with pi_a == 1; the adjusted IE divides by 1 - pi_a.
PI_CAP = 1.0 - 1e-12


class ClampWarning(UserWarning):
    """Edge probabilities above one were clamped."""


@dataclass(frozen=True)
class EdgeProbabilityModel:
    """Postulated probabilities of latent ego-ego and alter-ego edges.

    ``metric`` is ``"euclidean"``, ``"cosine"`` or ``"lp:<p>"``. Heterogeneous
    variants use ``gamma_e``/``gamma_a`` as homophily strengths.
    """

    variant: Variant
    rho_e: float | None = None
    rho_a: float | None = None
    m_e: float | None = None
    m_a: float | None = None
    gamma_e: float | None = None
    gamma_a: float | None = None
    metric: str | None = None
    standardize: bool | None = None

    _fields_by_variant = {
        "homogeneous_prob": ("rho_e", "rho_a"),
        "homogeneous_count": ("m_e", "m_a"),
        "heterogeneous_prob": ("rho_e", "rho_a", "gamma_e", "gamma_a", "metric", "standardize"),
        "heterogeneous_count": ("m_e", "m_a", "gamma_e", "gamma_a", "metric", "standardize"),
    }

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.is_heterogeneous:
            if self.gamma_e is None:
                object.__setattr__(self, "gamma_e", 0.0)
            if self.gamma_a is None:
                object.__setattr__(self, "gamma_a", 0.0)
            if self.metric is None:
                object.__setattr__(self, "metric", "euclidean")
            if self.standardize is None:
                object.__setattr__(self, "standardize", True)
        for name in self._fields_by_variant[self.variant]:
            if getattr(self, name) is None:
                raise ValueError(f"{self.variant} requires {name}")
        for name in ("rho_e", "rho_a"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} not in [0, 1]")
        for name in ("m_e", "m_a", "gamma_e", "gamma_a"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name}={v} must be finite and >= 0")
        if self.metric is not None:
            parse_metric(self.metric)

    @property
    def is_heterogeneous(self) -> bool:
        return self.variant.startswith("heterogeneous")

    @property
    def is_count(self) -> bool:
        return self.variant.endswith("count")

    @classmethod
    def homogeneous_prob(cls, rho_e: float, rho_a: float) -> "EdgeProbabilityModel":
        return cls("homogeneous_prob", rho_e=rho_e, rho_a=rho_a)

    @classmethod
    def homogeneous_count(cls, m_e: float, m_a: float) -> "EdgeProbabilityModel":
        return cls("homogeneous_count", m_e=m_e, m_a=m_a)

    @classmethod
    def heterogeneous_prob(
        cls, rho_e: float, rho_a: float, gamma_e: float, gamma_a: float,
        metric: str = "euclidean", standardize: bool = True,
    ) -> "EdgeProbabilityModel":
        return cls("heterogeneous_prob", rho_e=rho_e, rho_a=rho_a, gamma_e=gamma_e,
                   gamma_a=gamma_a, metric=metric, standardize=standardize)

    @classmethod
    def heterogeneous_count(
        cls, m_e: float, m_a: float, gamma_e: float, gamma_a: float,
        metric: str = "euclidean", standardize: bool = True,
    ) -> "EdgeProbabilityModel":
        return cls("heterogeneous_count", m_e=m_e, m_a=m_a, gamma_e=gamma_e,
                   gamma_a=gamma_a, metric=metric, standardize=standardize)

    def replace(self, **changes: Any) -> "EdgeProbabilityModel":
        d = {k: v for k, v in asdict(self).items()}
        d.update(changes)
        return EdgeProbabilityModel(**d)

    def to_dict(self) -> dict[str, Any]:
        keep = ("variant",) + self._fields_by_variant[self.variant]
        return {k: getattr(self, k) for k in keep}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EdgeProbabilityModel":
        allowed = {"variant", "rho_e", "rho_a", "m_e", "m_a", "gamma_e", "gamma_a", "metric", "standardize"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown edge-model keys: {sorted(unknown)}")
        if "variant" not in d:
            raise ValueError("edge model needs a 'variant'")
        extra = set(d) - {"variant"} - set(cls._fields_by_variant.get(d["variant"], ()))
        if extra:
            raise ValueError(f"keys {sorted(extra)} are not used by variant {d['variant']!r}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EdgeProbabilities:
    """Edge probabilities over the latent pairs.

    ``ego_ego`` is symmetric n_e x n_e with a zero diagonal; ``alter_ego`` is
    n_a x n_e with NaN at each alter's own ego.
    """

    ego_ego: np.ndarray
    alter_ego: np.ndarray
    clamped_mass: float = 0.0
    notes: tuple[str, ...] = field(default=(), repr=False)

    @property
    def alter_ego_filled(self) -> np.ndarray:
        """``alter_ego`` with the not-applicable entries set to 0."""
        return np.nan_to_num(self.alter_ego, nan=0.0)

    def expected_edges(self) -> tuple[float, float]:
        return float(np.triu(self.ego_ego, 1).sum()), float(np.nansum(self.alter_ego))

    def max_expected_degree(self) -> float:
        """Largest expected latent ego-ego degree (dependency-graph diagnostic)."""
        if self.ego_ego.size == 0:
            return 0.0
        return float(self.ego_ego.sum(axis=1).max())

    @classmethod
    def from_edges(
        cls,
        s: EgocentricSample,
        ego_ego_edges: Sequence[tuple[int, int]] = (),
        alter_ego_edges: Sequence[tuple[int, int]] = (),
    ) -> "EdgeProbabilities":
        """Degenerate 0/1 probabilities of a realized latent network.

        Edges are given as (ego position, ego position) and (alter position, ego position).
        """
        ee = np.zeros((s.n_e, s.n_e))
        for i, j in ego_ego_edges:
            if i == j:
                raise ValueError("self-edge")
            ee[i, j] = ee[j, i] = 1.0
        ae = np.zeros((s.n_a, s.n_e))
        for k, j in alter_ego_edges:
            if s.alter_ego[k] == j:
                raise ValueError(f"alter {k} -> own ego {j} is an observed edge")
            ae[k, j] = 1.0
        ae[np.arange(s.n_a), s.alter_ego] = np.nan
        return cls(ee, ae)


@dataclass(frozen=True, eq=False)
class ExposureProfile:
    """Per-unit exposure probabilities under a sensitivity model.

    ``three_level`` rows are (P(S=0), P(S=1), P(S>=2)) for the count of
    treated latent egos of each alter, excluding its own ego.
    """

    pi_a: np.ndarray
    pi_e: np.ndarray
    p_z: float
    three_level: np.ndarray | None = None
    edges: EdgeProbabilities | None = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class PairDistances:
    ego_ego: np.ndarray
    alter_ego: np.ndarray


def parse_metric(metric: str) -> tuple[str, float]:
    m = metric.strip().lower()
    if m in ("euclidean", "l2"):
        return "lp", 2.0
    if m == "cosine":
        return "cosine", 0.0
    if m.startswith("lp:"):
        p = float(m[3:])
        if not p >= 1:
            raise ValueError(f"Lp order must be >= 1, got {p}")
        return "lp", p
    if m == "l1":
        return "lp", 1.0
    raise ValueError(f"unknown metric {metric!r}")


def _cross_distances(A: np.ndarray, B: np.ndarray, kind: str, p: float) -> np.ndarray:
    if kind == "cosine":
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        if (na == 0).any() or (nb == 0).any():
            raise ValueError("cosine distance undefined for a zero covariate vector")
        cos = (A @ B.T) / np.outer(na, nb)
        return np.clip(1.0 - cos, 0.0, 2.0)
    diff = np.abs(A[:, None, :] - B[None, :, :])
    if p == 2.0:
        return np.sqrt((diff**2).sum(axis=2))
    if p == 1.0:
        return diff.sum(axis=2)
    return (diff**p).sum(axis=2) ** (1.0 / p)


def standardized_covariates(s: EgocentricSample) -> np.ndarray:
    """Center and scale each covariate over all recruited units (sample SD)."""
    X = s.X
    sd = X.std(axis=0, ddof=1) if len(X) > 1 else np.zeros(X.shape[1])
    bad = [s.covariate_names[k] if k < len(s.covariate_names) else str(k)
           for k in np.flatnonzero(~(sd > 0))]
    if bad:
        raise ValueError(f"cannot standardize zero-variance covariates: {bad}")
    return (X - X.mean(axis=0)) / sd


def pairwise_distances(s: EgocentricSample, metric: str = "euclidean", standardize: bool = True) -> PairDistances:
    """Covariate distances for ego-ego and alter-ego pairs."""
    if s.X.shape[1] == 0:
        raise ValueError("heterogeneous edge models need at least one covariate")
    kind, p = parse_metric(metric)
    X = standardized_covariates(s) if standardize else s.X
    Xe = X[s.ego_index]
    Xa = X[s.alter_index]
    ee = _cross_distances(Xe, Xe, kind, p)
    np.fill_diagonal(ee, 0.0)
    ee = 0.5 * (ee + ee.T)
    ae = _cross_distances(Xa, Xe, kind, p) if s.n_a else np.zeros((0, s.n_e))
    return PairDistances(ee, ae)


def _alter_mask(s: EgocentricSample) -> np.ndarray:
    mask = np.ones((s.n_a, s.n_e), dtype=bool)
    if s.n_a:
        mask[np.arange(s.n_a), s.alter_ego] = False
    return mask


def build_edge_probabilities(
    model: EdgeProbabilityModel,
    s: EgocentricSample,
    distances: PairDistances | None = None,
) -> EdgeProbabilities:
    """Edge-probability matrices implied by ``model`` on sample ``s``.

    ``distances`` may be passed to reuse a precomputed ``pairwise_distances``.
    """
    n_e, n_a = s.n_e, s.n_a
    pairs_e = n_e * (n_e - 1) / 2
    pairs_a = n_a * (n_e - 1)
    mask = _alter_mask(s)
    off = ~np.eye(n_e, dtype=bool)
    notes: list[str] = []
    clamped = 0.0

    if model.is_count:
        if model.m_e > pairs_e:
            raise ValueError(f"m_e={model.m_e} exceeds the {pairs_e:g} possible ego-ego edges")
        if model.m_a > pairs_a:
            raise ValueError(f"m_a={model.m_a} exceeds the {pairs_a:g} possible alter-ego edges")

    if model.variant == "homogeneous_prob":
        ee = np.where(off, model.rho_e, 0.0)
        ae = np.where(mask, model.rho_a, np.nan)
    elif model.variant == "homogeneous_count":
        rho_e = model.m_e / pairs_e if pairs_e > 0 else 0.0
        rho_a = model.m_a / pairs_a if pairs_a > 0 else 0.0
        ee = np.where(off, rho_e, 0.0)
        ae = np.where(mask, rho_a, np.nan)
    else:
        if distances is None:
            distances = pairwise_distances(s, model.metric, model.standardize)
        de, da = distances.ego_ego, distances.alter_ego
        if model.variant == "heterogeneous_prob":
            ee = np.where(off, _logistic_shift(model.rho_e, model.gamma_e, de, off & np.triu(off)), 0.0)
            ae = np.where(mask, _logistic_shift(model.rho_a, model.gamma_a, da, mask), np.nan)
        else:
            we = np.where(off, np.exp(-model.gamma_e * de), 0.0)
            wa = np.where(mask, np.exp(-model.gamma_a * da), 0.0)
            W_e = np.triu(we, 1).sum()
            W_a = wa.sum()
            ee = model.m_e / W_e * we if W_e > 0 else np.zeros_like(we)
            ae = model.m_a / W_a * wa if W_a > 0 else np.zeros_like(wa)
            ee, lost_e, note_e = _clamp(ee, "ego-ego", s, symmetric=True)
            ae, lost_a, note_a = _clamp(ae, "alter-ego", s, symmetric=False)
            clamped = lost_e + lost_a
            notes = [n for n in (note_e, note_a) if n]
            for n in notes:
                warnings.warn(n, ClampWarning, stacklevel=2)
            ae = np.where(mask, ae, np.nan)
    np.fill_diagonal(ee, 0.0)
    return EdgeProbabilities(ee, ae, clamped_mass=clamped, notes=tuple(notes))


def _logistic_shift(base: float, gamma: float, d: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    if base <= 0.0 or base >= 1.0 or gamma == 0.0:
        return np.full(d.shape, float(base))
    dbar = d[pairs].mean() if pairs.any() else 0.0
    return expit(logit(base) - gamma * (d - dbar))


def _clamp(P: np.ndarray, label: str, s: EgocentricSample, symmetric: bool):
    over = P > 1.0
    if not over.any():
        return P, 0.0, ""
    excess = P[over] - 1.0
    lost = float(excess.sum() / 2 if symmetric else excess.sum())
    idx = np.argwhere(np.triu(over, 1) if symmetric else over)
    i, j = idx[0]
    if symmetric:
        a, b = s.unit_ids[s.ego_index[i]], s.unit_ids[s.ego_index[j]]
    else:
        a, b = s.unit_ids[s.alter_index[i]], s.unit_ids[s.ego_index[j]]
    note = (
        f"{len(idx)} {label} probabilities exceeded 1 (first pair {a!r}-{b!r}, "
        f"value {P[i, j]:.6g}); clamped, expected-edge mass lost {lost:.6g}"
    )
    return np.minimum(P, 1.0), lost, note


def exposure_prob_ego(ep: EdgeProbabilities, p_z: float) -> np.ndarray:
    """P(at least one latent ego neighbour is treated), per ego."""
    return 1.0 - np.prod(1.0 - p_z * ep.ego_ego, axis=1)


def exposure_prob_alter(ep: EdgeProbabilities, p_z: float) -> np.ndarray:
    """P(own ego or a latent ego neighbour is treated), per alter."""
    miss = 1.0 - np.prod(1.0 - p_z * ep.alter_ego_filled, axis=1)
    return p_z + (1.0 - p_z) * miss


def poisson_binomial_tail(probs: Sequence[float]) -> tuple[float, float, float]:
    """(P(S=0), P(S=1), P(S>=2)) for a sum of independent Bernoulli(probs)."""
    q = np.asarray(probs, dtype=float)
    if ((q < 0) | (q > 1)).any():
        raise ValueError("success probabilities must be in [0, 1]")
    out = _pb_tail_rows(q[None, :])[0]
    return float(out[0]), float(out[1]), float(out[2])


def _pb_tail_rows(Q: np.ndarray) -> np.ndarray:
    """Row-wise Poisson-Binomial (P0, P1, P2+) for a matrix of success probabilities."""
    n_rows = Q.shape[0]
    out = np.empty((n_rows, 3))
    if Q.shape[1] == 0:
        out[:] = (1.0, 0.0, 0.0)
        return out
    certain = (Q >= 1.0).any(axis=1)
    ok = ~certain
    if ok.any():
        Qo = Q[ok]
        p0 = np.prod(1.0 - Qo, axis=1)
        p1 = p0 * (Qo / (1.0 - Qo)).sum(axis=1)
        out[ok, 0] = p0
        out[ok, 1] = p1
    for r in np.flatnonzero(certain):
        out[r, :2] = _pb_convolve_01(Q[r])
    out[:, 2] = np.clip(1.0 - out[:, 0] - out[:, 1], 0.0, 1.0)
    return out


def _pb_convolve_01(q: np.ndarray) -> tuple[float, float]:
    """P(S=0), P(S=1) by the truncated convolution recursion."""
    p0, p1 = 1.0, 0.0
    for qj in q:
        p0, p1 = p0 * (1.0 - qj), p1 * (1.0 - qj) + p0 * qj
    return p0, p1


def exposure_probs_three_level(ep: EdgeProbabilities, p_z: float) -> np.ndarray:
    """Per-alter (pi*_0, pi*_1, pi*_2+) of treated latent egos other than its own."""
    return _pb_tail_rows(p_z * ep.alter_ego_filled)


def exposure_profile(ep: EdgeProbabilities, p_z: float, three_level: bool = False) -> ExposureProfile:
    return ExposureProfile(
        pi_a=exposure_prob_alter(ep, p_z),
        pi_e=exposure_prob_ego(ep, p_z),
        p_z=p_z,
        three_level=exposure_probs_three_level(ep, p_z) if three_level else None,
        edges=ep,
    )


def no_contamination_profile(s: EgocentricSample, three_level: bool = False) -> ExposureProfile:
    ep = build_edge_probabilities(EdgeProbabilityModel.homogeneous_prob(0.0, 0.0), s)
    return exposure_profile(ep, s.p_z, three_level)

"""Contaminated ENRT simulator and replication study (bias, coverage, SD/SE)."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import seeding
from .estimators import alter_weights, ego_weights, normal_quantile
from .outcome import (
    OutcomeModelSpec,
    augmented_kernel,
    crossfit_predictions,
    make_crossfit_plan,
    unit_features,
)
from .sample import EgocentricSample
from .sensmodel import EdgeProbabilities, EdgeProbabilityModel, build_edge_probabilities, exposure_profile

SPECIFICATIONS = ("naive", "homogeneous", "heterogeneous", "oracle")
DEFAULT_ROSTER = (
    "heterogeneous", "heterogeneous+aug", "homogeneous", "homogeneous+aug", "naive", "naive+aug",
)
_SPEC_LABEL = {"naive": "Naive", "homogeneous": "Homogeneous", "heterogeneous": "Heterogeneous", "oracle": "Oracle"}

CovariateGenerator = Callable[[np.random.Generator, int, int], tuple[np.ndarray, np.ndarray]]


def default_covariates(rng: np.random.Generator, n_e: int, n_a: int) -> tuple[np.ndarray, np.ndarray]:
    """Two Bernoulli and one standard-normal covariate; egos use p=(0.6, 0.2), alters (0.5, 0.3)."""

    def draw(n, p1, p2):
        return np.column_stack([rng.random(n) < p1, rng.random(n) < p2, rng.standard_normal(n)]).astype(float)

    return draw(n_e, 0.6, 0.2), draw(n_a, 0.5, 0.3)


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario. ``gamma=None`` gives homogeneous contamination.

    Heterogeneous contamination weights pairs by exp(-gamma * distance) on the
    raw (unstandardized) covariates.
    """

    n_e: int = 200
    alters_per_ego: int = 2
    m_a: float = 100.0
    m_e: float = 150.0
    gamma: float | None = 1.0
    metric: str = "euclidean"
    p_z: float = 0.5

    def __post_init__(self) -> None:
        if self.n_e < 2 or self.alters_per_ego < 0:
            raise ValueError("need n_e >= 2 and alters_per_ego >= 0")
        if not 0.0 < self.p_z < 1.0:
            raise ValueError("p_z must be in (0, 1)")

    @property
    def label(self) -> str:
        return f"m_a={self.m_a:g}, m_e={self.m_e:g}"

    def generating_model(self) -> EdgeProbabilityModel:
        if self.gamma is None:
            return EdgeProbabilityModel.homogeneous_count(self.m_e, self.m_a)
        return EdgeProbabilityModel.heterogeneous_count(
            self.m_e, self.m_a, self.gamma, self.gamma, self.metric, standardize=False
        )


@dataclass(frozen=True, eq=False)
class PopulationNetwork:
    """Observed sample skeleton plus realized latent edges (ego positions throughout)."""

    sample: EgocentricSample
    model: EdgeProbabilityModel
    edge_probs: EdgeProbabilities
    ego_edges: np.ndarray  # (k, 2) ego-ego pairs i < j
    alter_edges: np.ndarray  # (k, 2) (alter, ego) pairs

    @property
    def ego_adjacency(self) -> np.ndarray:
        n = self.sample.n_e
        A = np.zeros((n, n))
        if len(self.ego_edges):
            A[self.ego_edges[:, 0], self.ego_edges[:, 1]] = 1.0
            A[self.ego_edges[:, 1], self.ego_edges[:, 0]] = 1.0
        return A

    @property
    def alter_adjacency(self) -> np.ndarray:
        A = np.zeros((self.sample.n_a, self.sample.n_e))
        if len(self.alter_edges):
            A[self.alter_edges[:, 0], self.alter_edges[:, 1]] = 1.0
        return A

    def realized_edge_probabilities(self) -> EdgeProbabilities:
        return EdgeProbabilities.from_edges(self.sample, self.ego_edges.tolist(), self.alter_edges.tolist())

    def true_exposures(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(ego, alter) exposures under the full network for treatment rows ``z``.

        ``z`` may be one vector or a (reps, n_e) matrix.
        """
        z = np.asarray(z, float)
        f_e = (z @ self.ego_adjacency.T) > 0
        f_a = (z[..., self.sample.alter_ego] > 0) | ((z @ self.alter_adjacency.T) > 0)
        return f_e.astype(np.int8), f_a.astype(np.int8)


def generate_population(
    cfg: ScenarioConfig,
    seed: int,
    index: int = 0,
    covgen: CovariateGenerator = default_covariates,
) -> PopulationNetwork:
    """Covariates, postulated edge probabilities and one realization of latent edges."""
    rng = seeding.stream(seed, seeding.NETWORK, index)
    n_e, n_a = cfg.n_e, cfg.n_e * cfg.alters_per_ego
    alter_ego = np.repeat(np.arange(n_e), cfg.alters_per_ego)
    X_e, X_a = covgen(rng, n_e, n_a)
    s = EgocentricSample.from_arrays(alter_ego, n_e, cfg.p_z, X_ego=X_e, X_alter=X_a)
    model = cfg.generating_model()
    ep = build_edge_probabilities(model, s)
    iu, ju = np.triu_indices(n_e, 1)
    hit_e = rng.random(len(iu)) < ep.ego_ego[iu, ju]
    U = rng.random((n_a, n_e))
    hit_a = U < ep.alter_ego_filled
    hit_a[np.arange(n_a), alter_ego] = False
    ego_edges = np.column_stack([iu[hit_e], ju[hit_e]])
    alter_edges = np.argwhere(hit_a)
    return PopulationNetwork(s, model, ep, ego_edges.reshape(-1, 2), alter_edges.reshape(-1, 2))


@dataclass(frozen=True)
class OutcomeCoefficients:
    ego_intercept: float = -0.5
    ego_z: float = 2.0
    ego_f: float = 0.5
    ego_zf: float = 1.0
    beta_e: tuple[float, ...] = (-0.5, -0.3, 0.2)
    alter_intercept: float = -0.5
    alter_f: float = 2.0
    beta_a: tuple[float, ...] = (-0.4, -0.2, 0.1)
    noise_sd: float = 1.0


@dataclass(frozen=True, eq=False)
class PotentialOutcomeTable:
    """Ego cells in columns 2z+f: Y(0,0), Y(0,1), Y(1,0), Y(1,1); alter cells Y(0,0), Y(0,1)."""

    ego: np.ndarray
    alter: np.ndarray

    def observed(self, z: np.ndarray, f_e: np.ndarray, f_a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Observed (ego, alter) outcomes by consistency; accepts batched rows."""
        z = np.asarray(z).astype(np.intp)
        cell = 2 * z + np.asarray(f_e, np.intp)
        y_e = np.take_along_axis(np.broadcast_to(self.ego, cell.shape + (4,)), cell[..., None], -1)[..., 0]
        fa = np.asarray(f_a, np.intp)
        y_a = np.take_along_axis(np.broadcast_to(self.alter, fa.shape + (2,)), fa[..., None], -1)[..., 0]
        return y_e, y_a


def generate_potential_outcomes(
    net: PopulationNetwork,
    coefficients: OutcomeCoefficients = OutcomeCoefficients(),
    seed: int = 0,
    index: int = 0,
) -> PotentialOutcomeTable:
    """Linear potential outcomes with one N(0, noise_sd^2) draw per unit shared across its cells."""
    c = coefficients
    s = net.sample
    if s.X.shape[1] != len(c.beta_e) or s.X.shape[1] != len(c.beta_a):
        raise ValueError("coefficient length does not match the covariate dimension")
    rng = seeding.stream(seed, seeding.OUTCOMES, index)
    eps_e = c.noise_sd * rng.standard_normal(s.n_e)
    eps_a = c.noise_sd * rng.standard_normal(s.n_a)
    base_e = c.ego_intercept + s.X_ego @ np.asarray(c.beta_e) + eps_e
    ego = np.column_stack([
        base_e,
        base_e + c.ego_f,
        base_e + c.ego_z,
        base_e + c.ego_z + c.ego_f + c.ego_zf,
    ])
    base_a = c.alter_intercept + s.X_alter @ np.asarray(c.beta_a) + eps_a
    alter = np.column_stack([base_a, base_a + c.alter_f])
    return PotentialOutcomeTable(ego, alter)


def observed_sample(net: PopulationNetwork, pot: PotentialOutcomeTable, z: np.ndarray) -> EgocentricSample:
    """The sample an investigator would see under treatment vector ``z``."""
    z = np.asarray(z, float)
    f_e, f_a = net.true_exposures(z)
    ye, ya = pot.observed(z, f_e, f_a)
    s = net.sample
    y = np.empty(s.n)
    y[s.ego_index], y[s.alter_index] = ye, ya
    return s.with_data(z_ego=z, y=y)


@dataclass(frozen=True)
class TrueEffects:
    ie: float
    de: float
    kappa: float
    kappa_constant: bool


def true_effects(pot: PotentialOutcomeTable, rtol: float = 1e-9) -> TrueEffects:
    """Average unit-level contrasts; kappa is NaN and flagged when not constant."""
    a, e = np.asarray(pot.alter, float), np.asarray(pot.ego, float)
    ie = math.fsum((a[:, 1] - a[:, 0]).tolist()) / len(a) if len(a) else math.nan
    unexposed = e[:, 2] - e[:, 0]
    exposed = e[:, 3] - e[:, 1]
    de = math.fsum(unexposed.tolist()) / len(e)
    if (unexposed == 0).any():
        return TrueEffects(ie, de, math.nan, False)
    ratio = exposed / unexposed
    constant = bool(np.allclose(ratio, ratio[0], rtol=rtol, atol=0.0))
    return TrueEffects(ie, de, float(ratio[0]) if constant else math.nan, constant)


# --- replication study ---------------------------------------------------


@dataclass(frozen=True)
class ReplicationRow:
    estimand: str
    scenario: str
    specification: str
    augmented: bool
    bias: float
    coverage: float
    sd_se: float
    reps: int

    def to_csv_row(self) -> list[str]:
        return [self.estimand, self.scenario, _SPEC_LABEL[self.specification], str(self.augmented).upper(),
                f"{self.bias:.17g}", f"{self.coverage:.17g}", f"{self.sd_se:.17g}"]


@dataclass(frozen=True, eq=False)
class ReplicationReport:
    rows: tuple[ReplicationRow, ...]
    truth: TrueEffects
    reps: int
    draws: dict = field(default_factory=dict, repr=False)

    CSV_HEADER = ("Estimand", "Scenario", "Specification", "Augmented", "Bias", "Coverage", "SD/SE")

    def row(self, estimand: str, specification: str, augmented: bool) -> ReplicationRow:
        for r in self.rows:
            if (r.estimand, r.specification, r.augmented) == (estimand, specification, augmented):
                return r
        raise KeyError((estimand, specification, augmented))

    def write_csv(self, path: str | Path) -> None:
        write_report_csv([self], path)


def write_report_csv(reports: Sequence[ReplicationReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ReplicationReport.CSV_HEADER)
        for rep in reports:
            for r in rep.rows:
                w.writerow(r.to_csv_row())


def parse_roster(roster: Sequence[str]) -> list[tuple[str, bool]]:
    out = []
    for item in roster:
        name, _, suffix = item.partition("+")
        if name not in SPECIFICATIONS or suffix not in ("", "aug"):
            raise ValueError(f"unknown estimator {item!r}; use one of {SPECIFICATIONS} with optional '+aug'")
        out.append((name, suffix == "aug"))
    if len(set(out)) != len(out):
        raise ValueError("duplicate estimators in roster")
    return out


@dataclass(frozen=True, eq=False)
class _Weights:
    w_a: np.ndarray
    w_e: np.ndarray
    rho_e: np.ndarray | None


def _spec_weights(spec: str, net: PopulationNetwork, kappa: float, p_z: float) -> _Weights:
    s = net.sample
    if spec == "naive":
        return _Weights(np.ones(s.n_a), np.ones(s.n_e), None)
    if spec == "heterogeneous":
        ep = net.edge_probs
    elif spec == "homogeneous":
        m_e, m_a = net.edge_probs.expected_edges()
        ep = build_edge_probabilities(EdgeProbabilityModel.homogeneous_count(m_e, m_a), s)
    else:
        ep = net.realized_edge_probabilities()
    prof = exposure_profile(ep, p_z)
    return _Weights(alter_weights(prof.pi_a, p_z), ego_weights(prof.pi_e, kappa), ep.ego_ego)


def _batch_ht(
    zb: np.ndarray, ye: np.ndarray, ya: np.ndarray, s: EgocentricSample, W: _Weights, membership: np.ndarray, p_z: float
) -> tuple[np.ndarray, ...]:
    """Vectorized (IE, var IE, DE, var DE) over a batch of replications."""
    n_e, n_a = s.n_e, s.n_a
    f_obs = zb[:, s.alter_ego]
    r_a = np.where(f_obs == 1, ya / p_z, -ya / (1 - p_z)) * W.w_a
    r_e = np.where(zb == 1, ye / p_z, -ye / (1 - p_z)) * W.w_e
    ie = r_a.mean(axis=1)
    T = r_a @ membership
    var_ie = ((T - T.mean(axis=1, keepdims=True)) ** 2).sum(axis=1) / n_a**2
    de = r_e.mean(axis=1)
    resid = r_e - de[:, None]
    var_de = (resid**2).sum(axis=1) / n_e**2
    if W.rho_e is not None:
        S = np.abs(resid)
        PS = S @ W.rho_e
        diag = (W.rho_e**2).sum(axis=1)
        total = (PS**2).sum(axis=1) - (S**2) @ diag
        var_de = var_de + np.maximum(total, 0.0) * p_z * (1 - p_z) / n_e**2
    return ie, var_ie, de, var_de


def treatment_draws(seed: int, reps: Sequence[int], n_e: int, p_z: float, index: int = 0) -> np.ndarray:
    """Bernoulli(p_z) ego treatments, one independent stream per replication."""
    return np.array(
        [(seeding.stream(seed, seeding.TREATMENT, index, r).random(n_e) < p_z) for r in reps], dtype=float
    ).reshape(len(reps), n_e)


def run_replications(
    net: PopulationNetwork,
    pot: PotentialOutcomeTable,
    roster: Sequence[str] = DEFAULT_ROSTER,
    reps: int = 5000,
    p_z: float | None = None,
    seed: int = 0,
    index: int = 0,
    kappa: float | None = None,
    outcome_spec: OutcomeModelSpec = OutcomeModelSpec(),
    level: float = 0.95,
    keep_draws: bool = False,
    batch: int = 500,
    scenario: str | None = None,
) -> ReplicationReport:
    """Redraw ego treatments ``reps`` times on a fixed network and outcome table.

    Adjusted estimators use ``kappa`` (default: the table's implied kappa). Each
    augmented replication uses a fresh cross-fitting split and linear outcome
    models fitted on that replication's data.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    s = net.sample
    p_z = s.p_z if p_z is None else p_z
    truth = true_effects(pot)
    if kappa is None:
        kappa = truth.kappa if truth.kappa_constant else 1.0
        if not truth.kappa_constant:
            warnings.warn("kappa is not constant across egos; adjusted DE uses kappa=1", UserWarning, stacklevel=2)
    items = parse_roster(roster)
    specs = sorted({name for name, _ in items}, key=SPECIFICATIONS.index)
    weights = {name: _spec_weights(name, net, kappa, p_z) for name in specs}
    membership = np.zeros((s.n_a, s.n_e))
    membership[np.arange(s.n_a), s.alter_ego] = 1.0
    feats = unit_features(s, outcome_spec)
    any_aug = any(aug for _, aug in items)

    keys = [(est, name, aug) for name, aug in items for est in ("IE", "DE")]
    points = {k: np.empty(reps) for k in keys}
    variances = {k: np.empty(reps) for k in keys}
    n_units_y = np.empty(s.n)
    for start in range(0, reps, batch):
        rr = range(start, min(reps, start + batch))
        zb = treatment_draws(seed, rr, s.n_e, p_z, index)
        f_e, f_a = net.true_exposures(zb)
        ye, ya = pot.observed(zb, f_e, f_a)
        sl = slice(rr.start, rr.stop)
        for name, aug in items:
            if aug:
                continue
            ie, vie, de, vde = _batch_ht(zb, ye, ya, s, weights[name], membership, p_z)
            points[("IE", name, False)][sl], variances[("IE", name, False)][sl] = ie, vie
            points[("DE", name, False)][sl], variances[("DE", name, False)][sl] = de, vde
        if not any_aug:
            continue
        for j, r in enumerate(rr):
            n_units_y[s.ego_index] = ye[j]
            n_units_y[s.alter_index] = ya[j]
            s_r = s.with_data(z_ego=zb[j], y=n_units_y)
            plan = make_crossfit_plan(s, seed, rep=r)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                preds = crossfit_predictions(s_r, outcome_spec, plan, features=feats)
            f_obs = zb[j, s.alter_ego]
            for name, aug in items:
                if not aug:
                    continue
                W = weights[name]
                vals = augmented_kernel(plan.folds, s.alter_ego, f_obs, ya[j], zb[j], ye[j], preds,
                                        W.w_a, W.w_e, W.rho_e, p_z)
                points[("IE", name, True)][r], variances[("IE", name, True)][r] = vals[0], vals[1]
                points[("DE", name, True)][r], variances[("DE", name, True)][r] = vals[2], vals[3]

    zq = normal_quantile(level)
    rows = []
    label = scenario if scenario is not None else ""
    for est in ("IE", "DE"):
        target = truth.ie if est == "IE" else truth.de
        for name, aug in items:
            k = (est, name, aug)
            rows.append(_summarize_reps(est, label, name, aug, points[k], variances[k], target, zq))
    draws = {k: (points[k], variances[k]) for k in keys} if keep_draws else {}
    return ReplicationReport(tuple(rows), truth, reps, draws)


def _summarize_reps(est, label, name, aug, pts, var, target, zq) -> ReplicationRow:
    se = np.sqrt(var)
    bias = math.fsum(pts.tolist()) / len(pts) - target
    covered = np.abs(pts - target) <= zq * se
    sd = float(np.std(pts, ddof=1)) if len(pts) > 1 else math.nan
    mean_se = math.fsum(se.tolist()) / len(se)
    sd_se = sd / mean_se if mean_se > 0 else math.nan
    return ReplicationRow(est, label, name, aug, bias, float(covered.mean()), sd_se, len(pts))


def simulate_scenario(
    cfg: ScenarioConfig,
    reps: int = 5000,
    seed: int = 0,
    index: int = 0,
    roster: Sequence[str] = DEFAULT_ROSTER,
    keep_draws: bool = False,
) -> tuple[PopulationNetwork, PotentialOutcomeTable, ReplicationReport]:
    """Generate one network and outcome table, then run the replication study."""
    net = generate_population(cfg, seed, index)
    pot = generate_potential_outcomes(net, seed=seed, index=index)
    report = run_replications(net, pot, roster, reps, cfg.p_z, seed, index, keep_draws=keep_draws,
                              scenario=cfg.label)
    return net, pot, report

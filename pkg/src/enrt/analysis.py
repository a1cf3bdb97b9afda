"""Grid sensitivity analysis (GSA) and probabilistic bias analysis (PBA)."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from . import seeding
from .estimators import (
    EffectEstimate,
    adjusted_de,
    adjusted_ie,
    adjusted_ie_rr,
    adjusted_ie_three_level,
)
from .outcome import CrossFitPredictions, OutcomeModelSpec, augmented_estimates, crossfit_predictions, make_crossfit_plan
from .sample import EgocentricSample
from .sensmodel import (
    EdgeProbabilityModel,
    PairDistances,
    build_edge_probabilities,
    exposure_profile,
    pairwise_distances,
)

ESTIMAND_CHOICES = ("IE", "DE", "IE_RR", "IE_3L")
SENSITIVITY_PARAMS = ("rho_e", "rho_a", "m_e", "m_a", "kappa", "delta")


@dataclass(frozen=True)
class SensitivityPoint:
    model: EdgeProbabilityModel
    kappa: float = 1.0
    delta: float | None = None

    def params(self) -> dict[str, Any]:
        d = self.model.to_dict()
        d["kappa"] = self.kappa
        if self.delta is not None:
            d["delta"] = self.delta
        return d


@dataclass(frozen=True)
class SensitivityGrid:
    points: tuple[SensitivityPoint, ...]
    augmented: bool = False
    three_level: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("sensitivity grid is empty")
        if self.three_level and any(p.delta is None for p in self.points):
            raise ValueError("three-level grid needs delta at every point")

    @classmethod
    def product(
        cls,
        base: EdgeProbabilityModel,
        axes: Mapping[str, Sequence[float]],
        kappas: Sequence[float] = (1.0,),
        deltas: Sequence[float | None] = (None,),
        augmented: bool = False,
        three_level: bool = False,
    ) -> "SensitivityGrid":
        """Cartesian product over model fields (e.g. ``{"m_a": [...]}``), kappa and delta.

        Axes vary in the given order with the last fastest.
        """
        names = list(axes)
        points = []
        for values in product(*(axes[n] for n in names)):
            model = base.replace(**dict(zip(names, values)))
            for k in kappas:
                for d in deltas:
                    points.append(SensitivityPoint(model, float(k), None if d is None else float(d)))
        return cls(tuple(points), augmented, three_level)


@dataclass(frozen=True, eq=False)
class AnalysisContext:
    """Inputs shared by every grid point or draw: the sample, cached distances and
    outcome-model predictions fitted once up front."""

    sample: EgocentricSample
    estimands: tuple[str, ...] = ("IE", "DE")
    level: float = 0.95
    predictions: CrossFitPredictions | None = None
    _distances: dict = field(default_factory=dict, repr=False)

    def distances(self, model: EdgeProbabilityModel) -> PairDistances | None:
        if not model.is_heterogeneous:
            return None
        key = (model.metric, model.standardize)
        if key not in self._distances:
            self._distances[key] = pairwise_distances(self.sample, model.metric, model.standardize)
        return self._distances[key]


def make_context(
    s: EgocentricSample,
    estimands: Sequence[str] = ("IE", "DE"),
    level: float = 0.95,
    outcome_spec: OutcomeModelSpec | None = None,
    crossfit_seed: int = 0,
    models: Iterable[EdgeProbabilityModel] = (),
) -> AnalysisContext:
    """Validate estimands, fit outcome models once (if ``outcome_spec``) and
    precompute distances for the given models."""
    bad = [e for e in estimands if e not in ESTIMAND_CHOICES]
    if bad:
        raise ValueError(f"unknown estimands {bad}; choose from {ESTIMAND_CHOICES}")
    preds = None
    if outcome_spec is not None:
        preds = crossfit_predictions(s, outcome_spec, make_crossfit_plan(s, crossfit_seed))
    ctx = AnalysisContext(s, tuple(estimands), level, preds)
    for m in models:
        ctx.distances(m)
    return ctx


def evaluate_point(ctx: AnalysisContext, point: SensitivityPoint) -> list[EffectEstimate]:
    """Bias-corrected estimates at one sensitivity point, in ``ctx.estimands`` order."""
    s = ctx.sample
    ep = build_edge_probabilities(point.model, s, ctx.distances(point.model))
    prof = exposure_profile(ep, s.p_z, three_level="IE_3L" in ctx.estimands)
    out: dict[str, EffectEstimate] = {}
    if ctx.predictions is not None and ({"IE", "DE"} & set(ctx.estimands)):
        out["IE"], out["DE"] = augmented_estimates(s, prof, point.kappa, predictions=ctx.predictions, level=ctx.level)
    else:
        if "IE" in ctx.estimands:
            out["IE"] = adjusted_ie(s, prof, ctx.level)
        if "DE" in ctx.estimands:
            out["DE"] = adjusted_de(s, prof, point.kappa, ctx.level)
    if "IE_RR" in ctx.estimands:
        out["IE_RR"] = adjusted_ie_rr(s, prof, ctx.level)
    if "IE_3L" in ctx.estimands:
        if point.delta is None:
            raise ValueError("IE_3L needs a delta value")
        out["IE_3L"] = adjusted_ie_three_level(s, prof, point.delta, ctx.level)
    params = point.params()
    return [_with_params(out[e], params) for e in ctx.estimands]


def _with_params(est: EffectEstimate, params: dict) -> EffectEstimate:
    merged = dict(params)
    merged.update(est.params)
    return EffectEstimate(est.estimand, est.point, est.variance, est.ci_low, est.ci_high, est.level, merged)


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _guarded(fn: Callable) -> Callable:
    def run(x):
        try:
            return fn(x), None
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    return run


@dataclass(frozen=True)
class GSARow:
    index: int
    point: SensitivityPoint
    estimates: tuple[EffectEstimate, ...]
    error: str | None = None


def run_gsa(
    s: EgocentricSample,
    grid: SensitivityGrid,
    estimands: Sequence[str] = ("IE", "DE"),
    level: float = 0.95,
    outcome_spec: OutcomeModelSpec | None = None,
    crossfit_seed: int = 0,
    workers: int = 1,
) -> list[GSARow]:
    """Adjusted estimates at every grid point. A failing point keeps its row with
    the error message and the run continues."""
    if "IE_3L" in estimands and not grid.three_level:
        raise ValueError("IE_3L requested on a grid without three_level")
    if grid.augmented and outcome_spec is None:
        outcome_spec = OutcomeModelSpec()
    ctx = make_context(
        s, estimands, level, outcome_spec if grid.augmented else None, crossfit_seed,
        [p.model for p in grid.points],
    )
    results = _map(_guarded(lambda p: evaluate_point(ctx, p)), grid.points, workers)
    return [GSARow(i, p, tuple(r or ()), err) for i, (p, (r, err)) in enumerate(zip(grid.points, results))]


# --- priors and PBA ------------------------------------------------------

_PRIOR_PARAMS = {
    "discrete_uniform": ("lo", "hi"),
    "poisson": ("mean",),
    "neg_binomial": ("mean", "size"),
    "uniform": ("lo", "hi"),
    "lognormal": ("meanlog", "sdlog"),
    "point": ("value",),
    "beta": ("a", "b"),
}


@dataclass(frozen=True)
class Prior:
    """One parameter's distribution, e.g. ``Prior("poisson", {"mean": 250})``."""

    dist: str
    params: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.dist not in _PRIOR_PARAMS:
            raise ValueError(f"unknown prior {self.dist!r}; choose from {sorted(_PRIOR_PARAMS)}")
        need = set(_PRIOR_PARAMS[self.dist])
        if set(self.params) != need:
            raise ValueError(f"{self.dist} prior needs exactly {sorted(need)}, got {sorted(self.params)}")
        p = {k: float(v) for k, v in self.params.items()}
        if not all(math.isfinite(v) for v in p.values()):
            raise ValueError("prior parameters must be finite")
        object.__setattr__(self, "params", p)
        bad = {
            "discrete_uniform": lambda: p["lo"] > p["hi"] or p["lo"] != int(p["lo"]) or p["hi"] != int(p["hi"]),
            "poisson": lambda: p["mean"] < 0,
            "neg_binomial": lambda: p["mean"] < 0 or p["size"] <= 0,
            "uniform": lambda: p["lo"] > p["hi"],
            "lognormal": lambda: p["sdlog"] < 0,
            "point": lambda: False,
            "beta": lambda: p["a"] <= 0 or p["b"] <= 0,
        }[self.dist]()
        if bad:
            raise ValueError(f"invalid {self.dist} parameters {p}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Prior":
        d = dict(d)
        if "dist" not in d:
            raise ValueError("prior needs a 'dist'")
        dist = d.pop("dist")
        return cls(dist, d)

    def to_dict(self) -> dict[str, Any]:
        return {"dist": self.dist, **self.params}


def sample_prior(p: Prior, rng: np.random.Generator) -> float:
    """One draw. NegBinomial uses (mean mu, size r) with variance mu + mu^2/r."""
    q = p.params
    if p.dist == "point":
        return q["value"]
    if p.dist == "discrete_uniform":
        return float(rng.integers(int(q["lo"]), int(q["hi"]), endpoint=True))
    if p.dist == "poisson":
        return float(rng.poisson(q["mean"]))
    if p.dist == "neg_binomial":
        r, mu = q["size"], q["mean"]
        return float(rng.negative_binomial(r, r / (r + mu)))
    if p.dist == "uniform":
        return float(rng.uniform(q["lo"], q["hi"]))
    if p.dist == "lognormal":
        return float(rng.lognormal(q["meanlog"], q["sdlog"]))
    return float(rng.beta(q["a"], q["b"]))


@dataclass(frozen=True)
class PBAConfig:
    draws: int
    seed: int
    statistical_uncertainty: bool = True
    percentiles: tuple[float, ...] = (2.5, 50.0, 97.5)

    def __post_init__(self) -> None:
        if self.draws < 1:
            raise ValueError("PBA needs at least one draw")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        object.__setattr__(self, "percentiles", tuple(sorted(float(x) for x in self.percentiles)))
        if any(not 0.0 <= x <= 100.0 for x in self.percentiles):
            raise ValueError("percentiles must lie in [0, 100]")


@dataclass(frozen=True)
class PBADraw:
    index: int
    params: dict[str, float]
    estimates: tuple[EffectEstimate, ...]
    values: tuple[float, ...]
    error: str | None = None


@dataclass(frozen=True)
class PBASummary:
    estimand: str
    n_ok: int
    n_failed: int
    mean: float
    percentiles: dict[float, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimand": self.estimand,
            "n_ok": self.n_ok,
            "n_failed": self.n_failed,
            "mean": self.mean,
            "percentiles": {f"{k:g}": v for k, v in self.percentiles.items()},
        }


@dataclass(frozen=True)
class PBAResult:
    draws: tuple[PBADraw, ...]
    summaries: tuple[PBASummary, ...]


def required_params(model: EdgeProbabilityModel, estimands: Sequence[str]) -> tuple[str, ...]:
    need = ["m_e", "m_a"] if model.is_count else ["rho_e", "rho_a"]
    if "DE" in estimands:
        need.append("kappa")
    if "IE_3L" in estimands:
        need.append("delta")
    return tuple(need)


def summarize(values: np.ndarray, percentiles: Sequence[float]) -> tuple[float, dict[float, float]]:
    """Mean and empirical percentiles (inverted CDF, averaging at ties between ranks)."""
    if values.size == 0:
        return math.nan, {q: math.nan for q in percentiles}
    pct = np.percentile(values, percentiles, method="averaged_inverted_cdf")
    return math.fsum(values.tolist()) / values.size, dict(zip(percentiles, map(float, pct)))


def run_pba(
    s: EgocentricSample,
    base_model: EdgeProbabilityModel,
    priors: Mapping[str, Prior],
    cfg: PBAConfig,
    estimands: Sequence[str] = ("IE", "DE"),
    level: float = 0.95,
    outcome_spec: OutcomeModelSpec | None = None,
    crossfit_seed: int | None = None,
    workers: int = 1,
) -> PBAResult:
    """Monte Carlo over the priors, optionally adding Normal(point, variance) noise.

    Draw b uses its own stream keyed on (seed, b); parameters are drawn in sorted
    name order. Homophily settings of ``base_model`` stay fixed. Failed draws are
    kept in the table with their error and left out of the summaries.
    """
    unknown = set(priors) - set(SENSITIVITY_PARAMS)
    if unknown:
        raise ValueError(f"priors given for unknown parameters {sorted(unknown)}")
    missing = [p for p in required_params(base_model, estimands) if p not in priors]
    if missing:
        raise ValueError(f"no prior for required parameters {missing}")
    unused = set(priors) - set(required_params(base_model, estimands))
    if unused:
        raise ValueError(f"priors for {sorted(unused)} are not used by this model/estimand choice")
    ctx = make_context(
        s, estimands, level, outcome_spec, cfg.seed if crossfit_seed is None else crossfit_seed, [base_model]
    )
    names = sorted(priors)
    model_fields = [n for n in names if n not in ("kappa", "delta")]

    def one(b: int) -> PBADraw:
        rng = seeding.stream(cfg.seed, seeding.PBA, b)
        params = {n: sample_prior(priors[n], rng) for n in names}
        try:
            model = base_model.replace(**{n: params[n] for n in model_fields})
            point = SensitivityPoint(model, params.get("kappa", 1.0), params.get("delta"))
            ests = evaluate_point(ctx, point)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            return PBADraw(b, params, (), (), f"{type(exc).__name__}: {exc}")
        values = []
        for e in ests:
            if cfg.statistical_uncertainty and e.variance is not None:
                values.append(float(rng.normal(e.point, math.sqrt(e.variance))))
            else:
                values.append(e.point)
        return PBADraw(b, params, tuple(ests), tuple(values))

    draws = tuple(_map(one, range(cfg.draws), workers))
    summaries = []
    for j, est in enumerate(estimands):
        ok = np.array([d.values[j] for d in draws if d.error is None], dtype=float)
        mean, pct = summarize(ok, cfg.percentiles)
        summaries.append(PBASummary(est, int(ok.size), cfg.draws - int(ok.size), mean, pct))
    return PBAResult(draws, tuple(summaries))

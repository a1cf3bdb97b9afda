"""Command-line interface: ``enrt estimate|gsa|pba|simulate --config FILE``.

Settings resolve as command-line flags > config file > defaults; ``ENRT_THREADS``
stands in for ``--threads`` when the flag is absent.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .analysis import (
    PBAConfig,
    Prior,
    SensitivityGrid,
    SensitivityPoint,
    required_params,
    run_gsa,
    run_pba,
)
from .estimators import EffectEstimate, naive_de, naive_ie
from .outcome import OutcomeModelSpec
from .sample import SampleError, load_sample
from .sensmodel import EdgeProbabilityModel
from .sim import DEFAULT_ROSTER, ScenarioConfig, parse_roster, simulate_scenario, write_report_csv

COMMANDS = ("estimate", "gsa", "pba", "simulate")
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class InputConfig(_Strict):
    path: str
    p_z: float = Field(gt=0.0, lt=1.0)
    columns: dict[str, str] | None = None
    covariates: list[str] | None = None


class EdgeModelConfig(_Strict):
    variant: Literal["homogeneous_prob", "homogeneous_count", "heterogeneous_prob", "heterogeneous_count"]
    rho_e: float | None = None
    rho_a: float | None = None
    m_e: float | None = None
    m_a: float | None = None
    gamma_e: float | None = None
    gamma_a: float | None = None
    metric: str | None = None
    standardize: bool | None = None

    @model_validator(mode="after")
    def _check(self) -> "EdgeModelConfig":
        self.to_model()
        return self

    def to_model(self) -> EdgeProbabilityModel:
        return EdgeProbabilityModel.from_dict(self.model_dump(exclude_none=True))


class OutcomeConfig(_Strict):
    family: Literal["linear", "logistic"] = "linear"
    covariates: list[str] | None = None
    neighbor_averages: bool = False

    def to_spec(self) -> OutcomeModelSpec:
        return OutcomeModelSpec(self.family, None if self.covariates is None else tuple(self.covariates),
                                self.neighbor_averages)


class GridConfig(_Strict):
    model: EdgeModelConfig
    axes: dict[str, list[float]] = Field(default_factory=dict)
    kappa: list[float] = Field(default_factory=lambda: [1.0])
    delta: list[float] | None = None
    three_level: bool = False

    @field_validator("axes")
    @classmethod
    def _axes(cls, v: dict[str, list[float]]) -> dict[str, list[float]]:
        bad = set(v) - {"rho_e", "rho_a", "m_e", "m_a", "gamma_e", "gamma_a"}
        if bad:
            raise ValueError(f"grid axes must be edge-model fields, got {sorted(bad)}")
        if any(len(vals) == 0 for vals in v.values()):
            raise ValueError("grid axes must be non-empty")
        return v


class PBABlock(_Strict):
    model: EdgeModelConfig
    priors: dict[str, dict[str, Any]]
    draws: int = Field(ge=1)
    statistical_uncertainty: bool = True
    percentiles: list[float] = Field(default_factory=lambda: [2.5, 50.0, 97.5])

    @field_validator("priors")
    @classmethod
    def _priors(cls, v: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
        for spec in v.values():
            Prior.from_dict(spec)
        return v


class ScenarioBlock(_Strict):
    n_e: int = 200
    alters_per_ego: int = 2
    m_a: float = 100.0
    m_e: float = 150.0
    gamma: float | None = 1.0
    metric: str = "euclidean"
    p_z: float = Field(default=0.5, gt=0.0, lt=1.0)


class SimulateBlock(_Strict):
    scenarios: list[ScenarioBlock] = Field(min_length=1)
    reps: int = Field(default=5000, ge=1)
    estimators: list[str] = Field(default_factory=lambda: list(DEFAULT_ROSTER))

    @field_validator("estimators")
    @classmethod
    def _roster(cls, v: list[str]) -> list[str]:
        parse_roster(v)
        return v


class RunConfig(_Strict):
    command: Literal["estimate", "gsa", "pba", "simulate"] | None = None
    input: InputConfig | None = None
    estimands: list[Literal["IE", "DE", "IE_RR", "IE_3L"]] = Field(default_factory=lambda: ["IE", "DE"])
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    out: str = "enrt-out"
    threads: int = Field(default=1, ge=1)
    model: EdgeModelConfig | None = None
    kappa: float = 1.0
    delta: float | None = None
    augmented: bool = False
    outcome_model: OutcomeConfig | None = None
    grid: GridConfig | None = None
    pba: PBABlock | None = None
    simulate: SimulateBlock | None = None

    @model_validator(mode="after")
    def _blocks(self) -> "RunConfig":
        if len(set(self.estimands)) != len(self.estimands):
            raise ValueError("duplicate estimands")
        need = {"estimate": ("input", "model"), "gsa": ("input", "grid"), "pba": ("input", "pba"),
                "simulate": ("simulate",)}
        if self.command is not None:
            missing = [b for b in need[self.command] if getattr(self, b) is None]
            if missing:
                raise ValueError(f"command {self.command!r} needs config block(s) {missing}")
        return self


# --- output helpers -------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_rows(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


PARAM_COLUMNS = ["variant", "rho_e", "rho_a", "m_e", "m_a", "gamma_e", "gamma_a", "kappa", "delta"]
EST_COLUMNS = ["estimand", "point", "variance", "ci_low", "ci_high", "level"]


def _est_cells(e: EffectEstimate | None, estimand: str = "") -> list[Any]:
    if e is None:
        return [estimand, None, None, None, None, None]
    return [e.estimand, e.point, e.variance, e.ci_low, e.ci_high, e.level]


# --- commands -------------------------------------------------------------


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _load(cfg: RunConfig, base: Path):
    assert cfg.input is not None
    path = _resolve(cfg.input.path, base)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return load_sample(path, cfg.input.p_z, columns=cfg.input.columns, covariates=cfg.input.covariates)


def _outcome_spec(cfg: RunConfig) -> OutcomeModelSpec:
    return cfg.outcome_model.to_spec() if cfg.outcome_model is not None else OutcomeModelSpec()


def prepare_estimate(cfg: RunConfig, base: Path) -> Callable[[Path], dict]:
    s = _load(cfg, base)
    model = cfg.model.to_model()
    point = SensitivityPoint(model, cfg.kappa, cfg.delta)
    grid = SensitivityGrid((point,), augmented=cfg.augmented, three_level="IE_3L" in cfg.estimands)
    spec = _outcome_spec(cfg)

    def run(out: Path) -> dict:
        rows, summary = [], []
        naive = {"IE": naive_ie, "DE": naive_de}
        for est in cfg.estimands:
            if est in naive:
                e = naive[est](s, cfg.level)
                rows.append(["naive", None] + _est_cells(e) + [None] * len(PARAM_COLUMNS))
                summary.append({"specification": "naive", **e.to_dict()})
        (res,) = run_gsa(s, grid, cfg.estimands, cfg.level, spec, cfg.seed)
        label = "augmented" if cfg.augmented else "adjusted"
        params = point.params()
        if res.error:
            rows.append([label, res.error] + _est_cells(None) + [params.get(c) for c in PARAM_COLUMNS])
            summary.append({"specification": label, "error": res.error})
        for e in res.estimates:
            rows.append([label, None] + _est_cells(e) + [params.get(c) for c in PARAM_COLUMNS])
            summary.append({"specification": label, **e.to_dict()})
        _write_rows(out / "estimates.csv", ["specification", "error"] + EST_COLUMNS + PARAM_COLUMNS, rows)
        return {"estimates": summary, "n_e": s.n_e, "n_a": s.n_a}

    return run


def prepare_gsa(cfg: RunConfig, base: Path, workers: int) -> Callable[[Path], dict]:
    s = _load(cfg, base)
    g = cfg.grid
    three = g.three_level or "IE_3L" in cfg.estimands
    deltas = g.delta if g.delta is not None else [None]
    grid = SensitivityGrid.product(g.model.to_model(), g.axes, g.kappa, deltas, cfg.augmented, three)
    spec = _outcome_spec(cfg)

    def run(out: Path) -> dict:
        res = run_gsa(s, grid, cfg.estimands, cfg.level, spec, cfg.seed, workers)
        rows = []
        for r in res:
            params = r.point.params()
            pcells = [params.get(c) for c in PARAM_COLUMNS]
            if r.error:
                rows.append([r.index, r.error] + _est_cells(None) + pcells)
            for e in r.estimates:
                rows.append([r.index, None] + _est_cells(e) + pcells)
        _write_rows(out / "estimates.csv", ["grid_point", "error"] + EST_COLUMNS + PARAM_COLUMNS, rows)
        return {"n_points": len(res), "n_failed": sum(r.error is not None for r in res),
                "augmented": cfg.augmented, "estimands": list(cfg.estimands)}

    return run


def prepare_pba(cfg: RunConfig, base: Path, workers: int) -> Callable[[Path], dict]:
    s = _load(cfg, base)
    b = cfg.pba
    priors = {k: Prior.from_dict(v) for k, v in b.priors.items()}
    pcfg = PBAConfig(b.draws, cfg.seed, b.statistical_uncertainty, tuple(b.percentiles))
    model = b.model.to_model()
    spec = _outcome_spec(cfg) if cfg.augmented else None
    # fail fast on prior coverage before any draw runs
    missing = [p for p in required_params(model, cfg.estimands) if p not in priors]
    if missing:
        raise ValueError(f"no prior for required parameters {missing}")

    def run(out: Path) -> dict:
        res = run_pba(s, model, priors, pcfg, cfg.estimands, cfg.level, spec, cfg.seed, workers)
        names = sorted(priors)
        rows = []
        for d in res.draws:
            pcells = [d.params[n] for n in names]
            if d.error:
                rows.append([d.index, d.error] + pcells + [None] * 4)
                continue
            for e, v in zip(d.estimates, d.values):
                rows.append([d.index, None] + pcells + [e.estimand, e.point, e.variance, v])
        _write_rows(out / "estimates.csv", ["draw", "error"] + names + ["estimand", "point", "variance", "value"], rows)
        return {"draws": b.draws, "statistical_uncertainty": b.statistical_uncertainty,
                "summaries": [x.to_dict() for x in res.summaries]}

    return run


def prepare_simulate(cfg: RunConfig, base: Path, workers: int) -> Callable[[Path], dict]:
    sim = cfg.simulate
    scenarios = [ScenarioConfig(**sc.model_dump()) for sc in sim.scenarios]

    def one(item):
        i, sc = item
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, _, rep = simulate_scenario(sc, sim.reps, cfg.seed, i, sim.estimators)
        return sc, rep

    def run(out: Path) -> dict:
        items = list(enumerate(scenarios))
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(one, items))
        else:
            results = [one(x) for x in items]
        write_report_csv([r for _, r in results], out / "estimates.csv")
        return {"reps": sim.reps, "scenarios": [
            {"scenario": sc.label, "true_ie": rep.truth.ie, "true_de": rep.truth.de, "true_kappa": rep.truth.kappa}
            for sc, rep in results
        ]}

    return run


# --- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="enrt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"enrt {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--threads", type=int, help="worker threads (overrides ENRT_THREADS and config)")
    return p


def resolve_config(args: argparse.Namespace, environ: dict[str, str] | None = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("config must be a JSON object")
    if raw.get("command") not in (None, args.command):
        raise ValueError(f"config is for command {raw['command']!r}, not {args.command!r}")
    raw["command"] = args.command
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    if args.threads is not None:
        raw["threads"] = args.threads
    elif environ.get("ENRT_THREADS"):
        try:
            raw["threads"] = int(environ["ENRT_THREADS"])
        except ValueError:
            raise ValueError(f"ENRT_THREADS must be an integer, got {environ['ENRT_THREADS']!r}") from None
    return RunConfig.model_validate(raw)


def _err(msg: str) -> None:
    print(f"enrt: {msg}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    base = Path(args.config).resolve().parent
    try:
        cfg = resolve_config(args)
        workers = cfg.threads
        if cfg.command == "estimate":
            run = prepare_estimate(cfg, base)
        elif cfg.command == "gsa":
            run = prepare_gsa(cfg, base, workers)
        elif cfg.command == "pba":
            run = prepare_pba(cfg, base, workers)
        else:
            run = prepare_simulate(cfg, base, workers)
    except SampleError as exc:
        for v in exc.violations:
            print(v.to_json(), file=sys.stderr)
        _err(f"invalid input: {len(exc.violations)} violation(s)")
        return EXIT_INVALID
    except (ValidationError, ValueError, OSError) as exc:
        _err(f"invalid configuration: {exc}")
        return EXIT_INVALID

    out = _resolve(cfg.out, Path.cwd())
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = run(out)
        _write_json(out / "summary.json", {"command": cfg.command, "seed": cfg.seed, **summary})
        _write_json(out / "manifest.json", {
            "software": "enrt",
            "version": __version__,
            "command": cfg.command,
            "seed": cfg.seed,
            "config": cfg.model_dump(mode="json", exclude={"out"}),
        })
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime failure
        _err(f"run failed: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""
End-to-end design runs: task definition, run configuration, A3C search with the GA inner
loop, re-scoring of fixed designs and the result bundle.
"""
import difflib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, Field

from a3c import A3cConfig, DesignCache, DesignEnvironment, GlobalStore, resolve_material, run_workers
from embedding import EncoderConfig, TsneConfig
from ga import GaConfig
from runtime_config import config
from solar import band_absorption, solar_absorber_target, solar_weighted_absorptance
from tmm import IncidenceSpec, Polarization, Quantity, StackOptics, TargetSpectrum, merit, observation_error
from tmm import read_spectrum_csv, write_spectrum_csv
from utils import band_mask, wavelength_grid, write_csv

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["episode", "episode_best_merit", "best_merit"]
EPISODE_COLUMNS = ["episode", "worker_id", "steps", "terminal_reason", "best_merit_so_far", "cache_hits",
                   "cache_misses"]


class UnknownMaterialError(ValueError):
    def __init__(self, name, suggestions):
        self.name = name
        self.suggestions = list(suggestions)
        hint = f"; did you mean {', '.join(self.suggestions)}?" if self.suggestions else ""
        super().__init__(f"Unknown material {name!r}{hint}")


class SearchFailure(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class DesignTask:
    layer_count: int
    target: TargetSpectrum
    incidence: IncidenceSpec = field(default_factory=IncidenceSpec)
    substrate: object = None  # material name/id, fixed index, or None for the last layer's material
    incident_medium: object = field(default_factory=lambda: config.INCIDENT_INDEX)
    frozen_layers: dict = field(default_factory=dict)  # 1-based layer -> material name or id
    epoch_budget: int = field(default_factory=lambda: config.EPOCH_BUDGET)
    seed: int = field(default_factory=lambda: config.SEED)
    band_nm: tuple = field(default_factory=lambda: tuple(config.SOLAR_BAND_NM))
    success_merit_threshold: Optional[float] = None
    success_band_absorption: Optional[float] = None  # absorption targets: band average that counts as success

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError("layer_count must be at least 1")
        if self.success_band_absorption is not None and not 0 < self.success_band_absorption <= 1:
            raise ValueError("success_band_absorption must lie in (0, 1]")
        if self.epoch_budget < 0:
            raise ValueError("epoch_budget must be non-negative")
        for layer in self.frozen_layers:
            if not 1 <= int(layer) <= self.layer_count:
                raise ValueError(f"Frozen layer {layer} outside 1..{self.layer_count}")

    def check_catalog(self, db):
        if not db.covers(self.target.wavelengths_nm):
            low, high = db.wavelength_support
            raise ValueError(f"Target grid leaves the catalog support [{low:g}, {high:g}] nm")

    def merit_threshold(self):
        if self.success_merit_threshold is not None:
            return self.success_merit_threshold
        return band_success_threshold(self.target, config.SUCCESS_BAND_ABSORPTION, self.band_nm)


@dataclass
class DesignResult:
    materials: list  # names, top layer first
    material_ids: list
    thicknesses_nm: list
    spectra: list  # one Spectrum per incidence angle
    merit: float
    observation_error: float
    average_absorption_band: float
    solar_absorptance: float
    search_trace: pd.DataFrame = None
    episodes: list = field(default_factory=list)
    cache_hits: int = 0
    cache_misses: int = 0
    ga_runs: int = 0
    agent: Optional[GlobalStore] = field(default=None, repr=False)

    @property
    def spectrum(self):
        return self.spectra[0]


def band_success_threshold(target: TargetSpectrum, band_average=None, band=None):
    """
    Merit reached when every high-target point sits at `band_average`:
    count * (1 - band_average)².
    """
    band_average = config.SUCCESS_BAND_ABSORPTION if band_average is None else band_average
    if band is None:
        points = int(np.sum(target.values >= 0.5))
    else:
        points = int(np.sum(band_mask(target.wavelengths_nm, band)))
    return points * (1.0 - band_average) ** 2


def _resolve_names(materials, db):
    ids = []
    for material in materials:
        if isinstance(material, str):
            if material not in db.names:
                raise UnknownMaterialError(material, difflib.get_close_matches(material, db.names, n=3, cutoff=0.3))
            ids.append(db.by_name(material).id)
        else:
            ids.append(db.by_id(int(material)).id)
    return ids


def evaluate_design(materials, thicknesses, task: DesignTask, db) -> DesignResult:
    if len(materials) != len(thicknesses):
        raise ValueError(f"{len(materials)} materials but {len(thicknesses)} thicknesses")
    if len(materials) == 0:
        raise ValueError("A design needs at least one layer")
    ids = _resolve_names(materials, db)
    thicknesses = np.asarray(thicknesses, dtype=float)
    if np.any(~np.isfinite(thicknesses)) or np.any(thicknesses <= 0):
        raise ValueError("Thicknesses must be positive and finite")
    task.check_catalog(db)

    optics = StackOptics.from_materials(
        ids, db, task.target.wavelengths_nm,
        resolve_material(db, task.incident_medium), resolve_material(db, task.substrate),
    )
    spectra = optics.spectra(thicknesses, task.incidence)
    band = task.band_nm if band_mask(task.target.wavelengths_nm, task.band_nm).any() else (-np.inf, np.inf)
    band_average = float(np.clip(np.mean([band_absorption(s, band) for s in spectra]), 0.0, 1.0))
    return DesignResult(
        materials=[db.by_id(i).name for i in ids],
        material_ids=ids,
        thicknesses_nm=[float(t) for t in thicknesses],
        spectra=spectra,
        merit=merit(spectra, task.target),
        observation_error=observation_error(spectra, task.target, task.incidence),
        average_absorption_band=band_average,
        solar_absorptance=solar_weighted_absorptance(spectra[0]),
    )


def trace_frame(summaries):
    ordered = sorted(summaries, key=lambda s: s.episode)
    episode_best = np.array([s.episode_best_merit for s in ordered], dtype=float)
    return pd.DataFrame({
        "episode": [s.episode for s in ordered],
        "episode_best_merit": episode_best,
        "best_merit": np.minimum.accumulate(episode_best) if len(episode_best) else episode_best,
    })


def episodes_frame(summaries):
    return pd.DataFrame([s.row() for s in summaries], columns=EPISODE_COLUMNS)


def run_search(task: DesignTask, a3c_cfg: A3cConfig, ga_cfg: GaConfig, env_map, db,
               store: GlobalStore = None, optimizer=None) -> DesignResult:
    """
    Searches material tuples with A3C workers; every tuple's thicknesses come from one GA run.
    """
    task.check_catalog(db)
    if tuple(env_map.ids) != tuple(db.ids):
        raise ValueError("Environment map and catalog list different materials")
    _resolve_names(list(task.frozen_layers.values()), db)
    for medium in (task.substrate, task.incident_medium):
        if isinstance(medium, str):
            _resolve_names([medium], db)

    a3c_cfg = a3c_cfg or A3cConfig()
    ga_cfg = ga_cfg or GaConfig()
    reward = a3c_cfg.reward.model_copy(update={
        "success_merit_threshold": task.merit_threshold(),
        "success_band_absorption": task.success_band_absorption,
    })
    a3c_cfg = a3c_cfg.model_copy(update={"seed": task.seed, "reward": reward})
    ga_cfg = ga_cfg.model_copy(update={"seed": task.seed})

    cache = DesignCache()
    env = DesignEnvironment(env_map, db, task, ga_cfg, cache, optimizer)
    summaries = []
    if not env.movable_layers:
        logger.info("All layers are frozen, running a single thickness optimization")
        env.evaluate_materials(tuple(env.frozen[j] for j in range(1, task.layer_count + 1)))
    else:
        store, summaries = run_workers(env, a3c_cfg, task.epoch_budget, store)

    trace = trace_frame(summaries)
    best = cache.best
    if best is None:
        raise SearchFailure("No state could be evaluated within the episode budget", trace)

    result = evaluate_design(list(best.materials), list(best.thicknesses), task, db)
    # The cached value is the run's reference merit
    result.merit = best.merit
    result.search_trace = trace
    result.episodes = summaries
    result.cache_hits, result.cache_misses = cache.counters()
    result.ga_runs = cache.computed
    result.agent = store
    logger.info("Search finished: %s at %s nm, merit %.6g",
                result.materials, [round(t, 1) for t in result.thicknesses_nm], result.merit)
    return result


def summary_frame(result: DesignResult):
    rows = [
        ("Materials", ", ".join(result.materials)),
        ("Thicknesses (nm)", ", ".join(f"{t:.1f}" for t in result.thicknesses_nm)),
        ("Merit", f"{result.merit:.6g}"),
        ("Observation error", f"{result.observation_error:.6g}"),
        ("Band-average absorption", f"{result.average_absorption_band:.2%}"),
        ("Solar-weighted absorptance", f"{result.solar_absorptance:.2%}"),
    ]
    if result.search_trace is not None:
        rows += [
            ("Episodes", f"{len(result.episodes)}"),
            ("GA runs", f"{result.ga_runs}"),
            ("Cache hits / misses", f"{result.cache_hits} / {result.cache_misses}"),
        ]
    return pd.DataFrame(rows, columns=["Metric", "Value"])


def write_bundle(result: DesignResult, out_dir, task: DesignTask):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "materials": list(result.materials),
        "material_ids": [int(i) for i in result.material_ids],
        "thicknesses_nm": [float(t) for t in result.thicknesses_nm],
        "merit": float(result.merit),
        "observation_error": float(result.observation_error),
        "average_absorption_band": float(result.average_absorption_band),
        "band_nm": [float(b) for b in task.band_nm],
        "solar_weighted_absorptance": float(result.solar_absorptance),
        "seed": int(task.seed),
        "episodes": len(result.episodes),
        "ga_runs": int(result.ga_runs),
        "cache_hits": int(result.cache_hits),
        "cache_misses": int(result.cache_misses),
    }
    (out_dir / "summary.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))
    write_spectrum_csv(result.spectra, out_dir / "spectrum.csv")
    trace = result.search_trace if result.search_trace is not None else pd.DataFrame(columns=TRACE_COLUMNS)
    write_csv(trace, out_dir / "trace.csv")
    write_csv(episodes_frame(result.episodes), out_dir / "episodes.csv")
    return out_dir


# ---------------------------------------------------------------------------
# Run configuration


class PathsConfig(BaseModel):
    catalog: Path = Path("data/nk")
    map: Path = Path("environment_map.yaml")


class TaskConfig(BaseModel):
    layer_count: int = Field(default=5, ge=1)
    grid_nm: Tuple[float, float, float] = Field(
        default_factory=lambda: (config.GRID_START_NM, config.GRID_STOP_NM, config.GRID_STEP_NM))
    band_nm: Tuple[float, float] = Field(default_factory=lambda: tuple(config.SOLAR_BAND_NM))
    weighting: str = "uniform"
    target_csv: Optional[Path] = None  # spectrum CSV used as target instead of the absorber band
    quantity: Quantity = Quantity.A
    angles_deg: List[float] = Field(default_factory=lambda: list(config.INCIDENCE_ANGLES_DEG))
    polarization: Polarization = Field(default_factory=lambda: Polarization(config.POLARIZATION))
    substrate: Optional[Union[str, float]] = None
    incident_medium: Union[str, float] = Field(default_factory=lambda: config.INCIDENT_INDEX)
    frozen_layers: Dict[int, str] = Field(default_factory=dict)
    epoch_budget: int = Field(default_factory=lambda: config.EPOCH_BUDGET, ge=0)
    success_band_absorption: float = Field(default_factory=lambda: config.SUCCESS_BAND_ABSORPTION, gt=0, le=1)
    success_merit_threshold: Optional[float] = Field(default=None, ge=0)
    seed: int = Field(default_factory=lambda: config.SEED)


class RunConfig(BaseModel):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    a3c: A3cConfig = Field(default_factory=A3cConfig)
    ga: GaConfig = Field(default_factory=GaConfig)
    embedding: EncoderConfig = Field(default_factory=EncoderConfig)
    tsne: TsneConfig = Field(default_factory=TsneConfig)

    def with_seed(self, seed):
        return self.model_copy(update={
            "task": self.task.model_copy(update={"seed": seed}),
            "embedding": self.embedding.model_copy(update={"seed": seed}),
            "tsne": self.tsne.model_copy(update={"seed": seed}),
        })


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ValueError(f"Cannot read run configuration {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ValueError(f"Invalid YAML in {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise ValueError(f"{path}: run configuration must be a mapping")

    run_cfg = RunConfig.model_validate(document)
    base = path.resolve().parent
    paths = run_cfg.paths.model_copy(update={
        "catalog": run_cfg.paths.catalog if run_cfg.paths.catalog.is_absolute() else base / run_cfg.paths.catalog,
        "map": run_cfg.paths.map if run_cfg.paths.map.is_absolute() else base / run_cfg.paths.map,
    })
    task = run_cfg.task
    if task.target_csv is not None and not task.target_csv.is_absolute():
        task = task.model_copy(update={"target_csv": base / task.target_csv})
    return run_cfg.model_copy(update={"paths": paths, "task": task})


def build_task(task_cfg: TaskConfig) -> DesignTask:
    if task_cfg.target_csv is not None:
        spectra = read_spectrum_csv(task_cfg.target_csv)
        target = TargetSpectrum.from_spectrum(spectra[0], task_cfg.quantity)
    else:
        target = solar_absorber_target(wavelength_grid(*task_cfg.grid_nm), task_cfg.band_nm, task_cfg.weighting)
    threshold = task_cfg.success_merit_threshold
    if threshold is None:
        threshold = band_success_threshold(target, task_cfg.success_band_absorption, task_cfg.band_nm)
    return DesignTask(
        layer_count=task_cfg.layer_count,
        target=target,
        incidence=IncidenceSpec(tuple(task_cfg.angles_deg), task_cfg.polarization),
        substrate=task_cfg.substrate,
        incident_medium=task_cfg.incident_medium,
        frozen_layers=dict(task_cfg.frozen_layers),
        epoch_budget=task_cfg.epoch_budget,
        seed=task_cfg.seed,
        band_nm=tuple(task_cfg.band_nm),
        success_merit_threshold=threshold,
        success_band_absorption=task_cfg.success_band_absorption if target.quantity == Quantity.A else None,
    )

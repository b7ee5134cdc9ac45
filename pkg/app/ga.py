"""
Genetic-algorithm thickness optimizer for a fixed material sequence.

Real-valued genes (one thickness per layer), truncation selection, single-point crossover,
per-gene uniform mutation and elitism. Fitness is -merit.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from runtime_config import config
from tmm import IncidenceSpec, StackOptics, TargetSpectrum, batch_merit
from utils import write_csv

logger = logging.getLogger(__name__)


def _fraction_count(rate, size):
    # round() keeps 0.3 * 10 from becoming 4 after ceil
    return math.ceil(round(rate * size, 9))


class GaConfig(BaseModel):
    population_size: int = Field(default_factory=lambda: config.GA_POPULATION_SIZE, ge=4)
    generations: int = Field(default_factory=lambda: config.GA_GENERATIONS, ge=1)
    selection_rate: float = Field(default_factory=lambda: config.GA_SELECTION_RATE, ge=0, le=1)
    mutation_rate: float = Field(default_factory=lambda: config.GA_MUTATION_RATE, ge=0, le=1)
    crossover_rate: float = Field(default_factory=lambda: config.GA_CROSSOVER_RATE, ge=0, le=1)
    elitism_rate: float = Field(default_factory=lambda: config.GA_ELITISM_RATE, ge=0, le=1)
    thickness_bounds_nm: Tuple[float, float] = Field(default_factory=lambda: tuple(config.GA_THICKNESS_BOUNDS_NM))
    seed: int = Field(default_factory=lambda: config.SEED)

    @model_validator(mode="after")
    def _check_consistency(self):
        lower, upper = self.thickness_bounds_nm
        if not lower < upper:
            raise ValueError(f"thickness bounds must satisfy lower < upper, got {self.thickness_bounds_nm}")
        if lower <= 0:
            raise ValueError("thickness bounds must be positive")
        if self.elitism_rate * self.population_size < 1:
            raise ValueError("elitism_rate * population_size must be at least 1")
        if self.pool_size < 1:
            raise ValueError("selection_rate leaves an empty parent pool")
        return self

    @property
    def pool_size(self):
        return _fraction_count(self.selection_rate, self.population_size)

    @property
    def elite_count(self):
        return _fraction_count(self.elitism_rate, self.population_size)


@dataclass
class GaResult:
    best_thicknesses: np.ndarray
    best_merit: float
    history: list  # best-ever merit after each generation
    mean_history: list = field(default_factory=list)
    evaluations: int = 0  # solver calls after de-duplication

    def trace_frame(self):
        return pd.DataFrame({
            "generation": np.arange(len(self.history)),
            "best_merit": self.history,
            "mean_merit": self.mean_history,
        })


def select(population, fitnesses, cfg: GaConfig, rng=None):
    """
    Truncation selection: the best ceil(selection_rate * size) individuals, stable on ties.
    """
    order = np.argsort(-np.asarray(fitnesses), kind="stable")
    return np.asarray(population)[order[:cfg.pool_size]]


def crossover(parent_a, parent_b, rng, rate=1.0, cut=None):
    """
    Single-point crossover at cut in 1..L-1, applied with probability `rate`.
    Children are copies when L = 1 or the pair is not crossed.
    """
    parent_a = np.asarray(parent_a, dtype=float)
    parent_b = np.asarray(parent_b, dtype=float)
    length = len(parent_a)
    if length != len(parent_b):
        raise ValueError("Parents must have equal length")
    if length < 2 or (cut is None and rng.random() >= rate):
        return parent_a.copy(), parent_b.copy()
    if cut is None:
        cut = int(rng.integers(1, length))
    if not 1 <= cut <= length - 1:
        raise ValueError(f"Cut position must be in [1, {length - 1}], got {cut}")
    child_a = np.concatenate([parent_a[:cut], parent_b[cut:]])
    child_b = np.concatenate([parent_b[:cut], parent_a[cut:]])
    return child_a, child_b


def mutate(chromosome, cfg: GaConfig, rng):
    chromosome = np.asarray(chromosome, dtype=float)
    lower, upper = cfg.thickness_bounds_nm
    mask = rng.random(len(chromosome)) < cfg.mutation_rate
    draws = rng.uniform(lower, upper, len(chromosome))
    return np.where(mask, draws, chromosome)


def next_generation(population, fitnesses, cfg: GaConfig, rng):
    population = np.asarray(population, dtype=float)
    size = len(population)
    order = np.argsort(-np.asarray(fitnesses), kind="stable")
    elite_count = min(cfg.elite_count, size)
    children = [population[i].copy() for i in order[:elite_count]]

    pool = select(population, fitnesses, cfg, rng)
    while len(children) < size:
        a, b = rng.integers(0, len(pool), size=2)
        child_a, child_b = crossover(pool[a], pool[b], rng, cfg.crossover_rate)
        children.append(mutate(child_a, cfg, rng))
        if len(children) < size:
            children.append(mutate(child_b, cfg, rng))
    return np.array(children)


class FitnessCache:
    """
    Merit lookups keyed on chromosomes rounded to GA_CACHE_DECIMALS. New keys in a
    population are solved in one batch.
    """

    def __init__(self, optics: StackOptics, target: TargetSpectrum, incidence: IncidenceSpec, decimals=None):
        self.optics = optics
        self.target = target
        self.incidence = incidence
        self.decimals = config.GA_CACHE_DECIMALS if decimals is None else decimals
        self.merits = {}
        self.hits = 0
        self.evaluations = 0

    def _key(self, chromosome):
        return tuple(np.round(chromosome, self.decimals).tolist())

    def evaluate(self, population):
        keys = [self._key(c) for c in population]
        pending = {}
        for i, key in enumerate(keys):
            if key in self.merits or key in pending:
                self.hits += 1
            else:
                pending[key] = i
        if pending:
            batch = population[list(pending.values())]
            absorption, reflection, transmission = self.optics.solve(batch, self.incidence)
            values = batch_merit(absorption, reflection, transmission, self.target)
            for key, value in zip(pending, values):
                self.merits[key] = float(value)
            self.evaluations += len(pending)
        return np.array([self.merits[key] for key in keys])


def optimize_thickness(materials, target: TargetSpectrum, incidence: IncidenceSpec, cfg: GaConfig, db,
                       incident_medium=1.0, substrate=None) -> GaResult:
    """
    substrate=None treats the last layer's material as semi-infinite.
    """
    if len(materials) == 0:
        raise ValueError("At least one material is required")
    cfg = cfg or GaConfig()
    incidence = incidence or IncidenceSpec()
    optics = StackOptics.from_materials(materials, db, target.wavelengths_nm, incident_medium, substrate)
    return run_ga(optics, target, incidence, cfg)


def run_ga(optics: StackOptics, target: TargetSpectrum, incidence: IncidenceSpec, cfg: GaConfig) -> GaResult:
    rng = np.random.default_rng(cfg.seed)
    lower, upper = cfg.thickness_bounds_nm
    layers = len(optics.layer_indices)
    cache = FitnessCache(optics, target, incidence)

    population = rng.uniform(lower, upper, size=(cfg.population_size, layers))
    best_merit = np.inf
    best = None
    history, mean_history = [], []
    for generation in range(cfg.generations):
        merits = cache.evaluate(population)
        index = int(np.argmin(merits))
        if merits[index] < best_merit:
            best_merit = float(merits[index])
            best = population[index].copy()
        history.append(best_merit)
        mean_history.append(float(np.mean(merits)))
        if generation % 50 == 0:
            logger.debug("GA generation %d: best merit %.6g", generation, best_merit)
        if generation < cfg.generations - 1:
            population = next_generation(population, -merits, cfg, rng)

    return GaResult(best, best_merit, history, mean_history, cache.evaluations)


def write_ga_trace(result: GaResult, path):
    return write_csv(result.trace_frame(), path)

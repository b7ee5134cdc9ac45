import tempfile
import unittest
from pathlib import Path

import numpy as np

import context  # noqa: F401
from catalog_factory import constant_db
from ga import (
    FitnessCache,
    GaConfig,
    crossover,
    mutate,
    next_generation,
    optimize_thickness,
    run_ga,
    select,
    write_ga_trace,
)
from tmm import IncidenceSpec, Polarization, Quantity, StackOptics, TargetSpectrum, merit

NORMAL = IncidenceSpec((0.0,), Polarization.UNPOLARIZED)


def antireflection_problem():
    """MgF2 on glass, reflectance at 550 nm."""
    db = constant_db([1.38, 1.5])
    target = TargetSpectrum([550.0], [0.0], quantity=Quantity.R)
    return db, target


def absorber_problem():
    db = constant_db([2.0 + 0.6j, 1.5])
    grid = np.linspace(400, 800, 41)
    target = TargetSpectrum(grid, np.ones(len(grid)))
    return db, target


class TestConfig(unittest.TestCase):
    def test_counts(self):
        cfg = GaConfig(population_size=10, elitism_rate=0.1)
        self.assertEqual(cfg.pool_size, 3)
        self.assertEqual(cfg.elite_count, 1)
        self.assertEqual(GaConfig().elite_count, 10)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            GaConfig(thickness_bounds_nm=(200.0, 10.0))
        with self.assertRaises(ValueError):
            GaConfig(population_size=100, elitism_rate=0.001)
        with self.assertRaises(ValueError):
            GaConfig(population_size=3)
        with self.assertRaises(ValueError):
            GaConfig(mutation_rate=1.5)


class TestOperators(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.cfg = GaConfig(population_size=10)

    def test_pool_is_the_best_three(self):
        population = np.arange(10, dtype=float)[:, None]
        fitnesses = np.array([5, 1, 9, 3, 7, 0, 8, 2, 6, 4], dtype=float)
        pool = select(population, fitnesses, self.cfg, self.rng)
        np.testing.assert_array_equal(pool[:, 0], [2, 6, 4])
        excluded = np.delete(fitnesses, [2, 6, 4])
        self.assertTrue(np.all(fitnesses[[2, 6, 4]] >= excluded.max()))

    def test_equal_fitness_keeps_index_order(self):
        population = np.arange(10, dtype=float)[:, None]
        pool = select(population, np.zeros(10), self.cfg, self.rng)
        np.testing.assert_array_equal(pool[:, 0], [0, 1, 2])

    def test_crossover_at_cut(self):
        a, b = crossover([1, 2, 3, 4], [5, 6, 7, 8], self.rng, cut=2)
        np.testing.assert_array_equal(a, [1, 2, 7, 8])
        np.testing.assert_array_equal(b, [5, 6, 3, 4])

    def test_crossover_of_identical_parents(self):
        parent = [10.0, 20.0, 30.0]
        for cut in (1, 2):
            a, b = crossover(parent, parent, self.rng, cut=cut)
            np.testing.assert_array_equal(a, parent)
            np.testing.assert_array_equal(b, parent)

    def test_crossover_conserves_genes(self):
        for _ in range(100):
            a, b = self.rng.uniform(10, 200, (2, 5))
            child_a, child_b = crossover(a, b, self.rng)
            np.testing.assert_array_equal(np.sort([child_a, child_b], axis=0), np.sort([a, b], axis=0))

    def test_single_gene_crossover_copies(self):
        a, b = crossover([1.0], [2.0], self.rng)
        self.assertEqual((a[0], b[0]), (1.0, 2.0))

    def test_crossover_rate_zero_copies(self):
        a, b = crossover([1, 2, 3], [4, 5, 6], self.rng, rate=0.0)
        np.testing.assert_array_equal(a, [1, 2, 3])
        np.testing.assert_array_equal(b, [4, 5, 6])

    def test_invalid_cut(self):
        with self.assertRaises(ValueError):
            crossover([1, 2, 3], [4, 5, 6], self.rng, cut=3)

    def test_mutation_rate_zero_is_identity(self):
        chromosome = np.array([15.0, 60.0, 150.0])
        np.testing.assert_array_equal(mutate(chromosome, GaConfig(mutation_rate=0.0), self.rng), chromosome)

    def test_mutation_rate_one_resamples_all(self):
        chromosome = np.full(1000, 5.0)
        mutated = mutate(chromosome, GaConfig(mutation_rate=1.0), self.rng)
        self.assertTrue(np.all(mutated != 5.0))
        self.assertTrue(np.all((mutated >= 10.0) & (mutated <= 200.0)))

    def test_mutation_frequency(self):
        mutated = mutate(np.full(100000, 5.0), GaConfig(mutation_rate=0.1), self.rng)
        fraction = np.mean(mutated != 5.0)
        self.assertTrue(0.095 <= fraction <= 0.105)

    def test_elites_carried_over_unchanged(self):
        cfg = GaConfig(population_size=100)
        population = self.rng.uniform(10, 200, (100, 4))
        fitnesses = self.rng.normal(size=100)
        children = next_generation(population, fitnesses, cfg, self.rng)
        self.assertEqual(children.shape, population.shape)
        best = np.argsort(-fitnesses, kind="stable")[:10]
        np.testing.assert_array_equal(children[:10], population[best])

    def test_children_stay_in_bounds(self):
        cfg = GaConfig(population_size=20, mutation_rate=0.5)
        population = self.rng.uniform(10, 200, (20, 3))
        for _ in range(200):
            population = next_generation(population, self.rng.normal(size=20), cfg, self.rng)
            self.assertTrue(np.all((population >= 10.0) & (population <= 200.0)))


class TestOptimizeThickness(unittest.TestCase):
    def test_quarter_wave_antireflection(self):
        db, target = antireflection_problem()
        expected = ((1.5 - 1.38**2) / (1.5 + 1.38**2)) ** 2
        for seed in range(20):
            with self.subTest(seed=seed):
                cfg = GaConfig(population_size=100, generations=500, seed=seed)
                result = optimize_thickness([0], target, NORMAL, cfg, db, substrate=1)
                self.assertAlmostEqual(result.best_thicknesses[0], 550.0 / (4 * 1.38), delta=5.0)
                self.assertAlmostEqual(result.best_merit, expected, delta=1e-4)

    def test_matches_exhaustive_scan(self):
        db, target = absorber_problem()
        optics = StackOptics.from_materials([0], db, target.wavelengths_nm, substrate=1)
        scan = np.arange(10.0, 200.0001, 0.5)[:, None]
        absorption, _, _ = optics.solve(scan, NORMAL)
        scan_best = np.sum((absorption[0] - 1.0) ** 2, axis=1).min()

        result = run_ga(optics, target, NORMAL, GaConfig(population_size=100, generations=100, seed=2))
        self.assertLessEqual(result.best_merit, scan_best + 1e-3)

    def test_history_monotone_and_bounded(self):
        _, target = absorber_problem()
        db = constant_db([2.0 + 0.6j, 1.4, 3.0 + 0.1j, 1.5])
        for seed in range(5):
            cfg = GaConfig(population_size=20, generations=30, seed=seed)
            result = optimize_thickness([0, 1, 2], target, NORMAL, cfg, db, substrate=3)
            self.assertTrue(np.all(np.diff(result.history) <= 0))
            self.assertEqual(len(result.history), 30)
            self.assertTrue(np.all((result.best_thicknesses >= 10) & (result.best_thicknesses <= 200)))
            self.assertEqual(result.history[-1], result.best_merit)

    def test_deterministic(self):
        db, target = absorber_problem()
        cfg = GaConfig(population_size=20, generations=20, seed=7)
        first = optimize_thickness([0], target, NORMAL, cfg, db, substrate=1)
        second = optimize_thickness([0], target, NORMAL, cfg, db, substrate=1)
        np.testing.assert_array_equal(first.best_thicknesses, second.best_thicknesses)
        self.assertEqual(first.history, second.history)

    def test_collapsed_bounds(self):
        db, target = absorber_problem()
        cfg = GaConfig(population_size=10, generations=5, thickness_bounds_nm=(50.0, 50.0001))
        result = optimize_thickness([0], target, NORMAL, cfg, db, substrate=1)
        self.assertAlmostEqual(result.best_thicknesses[0], 50.0, delta=1e-3)
        fixed = StackOptics.from_materials([0], db, target.wavelengths_nm, substrate=1).spectra([50.0], NORMAL)
        self.assertAlmostEqual(result.best_merit, merit(fixed, target), delta=1e-4)

    def test_empty_materials(self):
        db, target = absorber_problem()
        with self.assertRaises(ValueError):
            optimize_thickness([], target, NORMAL, GaConfig(), db)

    def test_trace_file(self):
        db, target = absorber_problem()
        result = optimize_thickness([0], target, NORMAL, GaConfig(population_size=10, generations=4), db, substrate=1)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_ga_trace(result, Path(tmp) / "ga.csv")
            self.assertEqual(path.read_text().splitlines()[0], "generation,best_merit,mean_merit")
            self.assertEqual(len(path.read_text().splitlines()), 5)


class TestFitnessCache(unittest.TestCase):
    def test_rounded_duplicates_are_solved_once(self):
        db, target = absorber_problem()
        optics = StackOptics.from_materials([0], db, target.wavelengths_nm, substrate=1)
        cache = FitnessCache(optics, target, NORMAL)
        population = np.array([[50.0], [50.001], [80.0], [50.0]])
        merits = cache.evaluate(population)
        self.assertEqual(cache.evaluations, 2)
        self.assertEqual(cache.hits, 2)
        self.assertEqual(merits[0], merits[1])
        cache.evaluate(population[:1])
        self.assertEqual(cache.evaluations, 2)


if __name__ == "__main__":
    unittest.main()

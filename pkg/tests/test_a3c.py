import tempfile
import threading
import time
import unittest
from pathlib import Path
from types import SimpleNamespace

import numpy as np

import context  # noqa: F401
from a3c import (
    A3cConfig,
    ActorCritic,
    DesignCache,
    DesignEnvironment,
    EnvState,
    Evaluation,
    GlobalStore,
    RewardConfig,
    Transition,
    UpdateError,
    actor_forward,
    actor_loss,
    build_action_table,
    compute_reward,
    critic_forward,
    critic_loss,
    load_checkpoint,
    n_step_returns,
    n_step_update,
    reward_case,
    run_workers,
    save_checkpoint,
    step,
    trajectory_gradients,
)
from catalog_factory import constant_db
from embedding import EnvironmentMap
from ga import GaConfig
from networks import relu, softmax
from test_networks import numeric_gradient
from tmm import IncidenceSpec, Quantity, StackOptics, TargetSpectrum

TINY = A3cConfig(actor_hidden=[5, 4], critic_hidden=[5, 4, 3], seed=3)


def lattice_map(side=10):
    """side x side materials on a regular lattice, id = i * side + j for lattice cell (i, j)."""
    ids, points = [], []
    for i in range(side):
        for j in range(side):
            ids.append(i * side + j)
            points.append(((i + 0.5) / side, (j + 0.5) / side))
    return EnvironmentMap(ids, [f"L{k}" for k in ids], ["Other"] * len(ids), points)


def corner_optimizer(side=10):
    """Merit is the lattice distance to the (side-1, side-1) corner summed over layers."""
    def optimize(materials):
        merit = float(sum((side - 1 - m // side) + (side - 1 - m % side) for m in materials))
        return Evaluation(tuple(materials), (100.0,) * len(materials), merit, merit)
    return optimize


def toy_environment(layer_count=1, optimizer=None):
    task = SimpleNamespace(layer_count=layer_count, frozen_layers={})
    return DesignEnvironment(lattice_map(), None, task, cache=DesignCache(),
                             optimizer=optimizer or corner_optimizer())


def random_transitions(rng, count, layers=2, actions=8, terminal=False):
    items = []
    for i in range(count):
        state = EnvState(tuple(map(tuple, rng.integers(0, 100, (layers, 2)))))
        following = EnvState(tuple(map(tuple, rng.integers(0, 100, (layers, 2)))))
        items.append(Transition(state, int(rng.integers(actions)), float(rng.normal()), following,
                                terminal and i == count - 1))
    return items


class TestActions(unittest.TestCase):
    def test_four_layer_table(self):
        table = build_action_table(4)
        self.assertEqual(len(table), 16)
        rows = [(a.layer, a.dx, a.dy) for a in table]
        self.assertEqual(rows, [
            (1, 1, 0), (1, 0, 1), (1, -1, 0), (1, 0, -1),
            (2, 1, 0), (2, 0, 1), (2, -1, 0), (2, 0, -1),
            (3, -1, 0), (3, 0, -1), (3, 1, 0), (3, 0, 1),
            (4, -1, 0), (4, 0, -1), (4, 0, 1), (4, 1, 0),
        ])
        self.assertEqual(table.decode(0).delta, (0.01, 0.0))
        self.assertEqual(table.decode(9).delta, (0.0, -0.01))
        self.assertEqual(table.decode(15).delta, (0.01, 0.0))

    def test_every_layer_has_all_four_moves(self):
        table = build_action_table(8)
        for layer in range(1, 9):
            moves = {(a.dx, a.dy) for a in table if a.layer == layer}
            self.assertEqual(moves, {(1, 0), (0, 1), (-1, 0), (0, -1)})

    def test_encode_decode_round_trip(self):
        table = build_action_table(5)
        for action in table:
            self.assertEqual(table.decode(table.encode(action.layer, action.dx, action.dy)), action)

    def test_single_layer(self):
        table = build_action_table(1)
        self.assertEqual(len(table), 4)
        self.assertEqual({a.layer for a in table}, {1})

    def test_explicit_layers(self):
        table = build_action_table([1, 2, 3, 4])
        self.assertEqual([a.layer for a in table], [a.layer for a in build_action_table(4)])
        with self.assertRaises(ValueError):
            build_action_table(0)


class TestStep(unittest.TestCase):
    def setUp(self):
        self.table = build_action_table(2)

    def test_move(self):
        moved = step(EnvState(((50, 50), (10, 10))), self.table.decode(0))
        self.assertEqual(moved.positions, [(0.51, 0.5), (0.1, 0.1)])

    def test_clamped_at_boundary(self):
        state = EnvState(((0, 30), (99, 99)))
        self.assertEqual(step(state, self.table.decode(2)), state)
        self.assertEqual(step(state, self.table.decode(4)), state)
        self.assertEqual(step(state, self.table.decode(5)), state)

    def test_inverse_move_restores_state(self):
        state = EnvState(((40, 60), (20, 70)))
        for forward, backward in ((0, 2), (1, 3), (4, 6), (5, 7)):
            self.assertEqual(step(step(state, self.table.decode(forward)), self.table.decode(backward)), state)

    def test_random_walks_stay_on_grid(self):
        rng = np.random.default_rng(0)
        state = EnvState(((0, 0), (99, 99)))
        for _ in range(5000):
            state = step(state, self.table.decode(int(rng.integers(len(self.table)))))
            for x, y in state.cells:
                self.assertTrue(0 <= x <= 99 and 0 <= y <= 99)

    def test_off_grid_state_rejected(self):
        with self.assertRaises(ValueError):
            EnvState(((100, 0),))


class TestRewards(unittest.TestCase):
    def setUp(self):
        self.cfg = RewardConfig(success_merit_threshold=1.0)

    def test_success(self):
        self.assertEqual(compute_reward(5.0, 0.5, 0, self.cfg), 1.0)

    def test_stall(self):
        self.assertEqual(compute_reward(5.0, 6.0, 20, self.cfg), -1.0)

    def test_not_improved(self):
        self.assertEqual(compute_reward(5.0, 5.0, 3, self.cfg), -0.01)

    def test_improvement_reward(self):
        self.assertEqual(compute_reward(5.0, 4.0, 0, self.cfg, observation_error=0.0), 1.0)
        self.assertAlmostEqual(compute_reward(5.0, 4.0, 0, self.cfg, observation_error=3.0), 0.25)
        scaled = self.cfg.model_copy(update={"observation_scale": 2.0})
        self.assertAlmostEqual(compute_reward(5.0, 4.0, 0, scaled, observation_error=1.0), 1.0)

    def test_band_average_counts_as_success(self):
        cfg = RewardConfig(success_merit_threshold=0.2775, success_band_absorption=0.95)
        self.assertEqual(reward_case(5.0, 1.03, 0, cfg, band_absorption=0.96), "success")
        self.assertEqual(compute_reward(5.0, 1.03, 0, cfg, band_absorption=0.96), 1.0)
        self.assertEqual(reward_case(5.0, 1.03, 0, cfg, band_absorption=0.94), "improved")
        self.assertEqual(reward_case(5.0, 1.03, 0, cfg), "improved")
        # Without a band criterion only the merit threshold applies
        self.assertEqual(reward_case(5.0, 1.03, 0, self.cfg, band_absorption=0.99), "improved")

    def test_exactly_one_case(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            prev, new = rng.uniform(0, 3, 2)
            stall = int(rng.integers(0, 30))
            case = reward_case(prev, new, stall, self.cfg)
            expected = [
                new <= 1.0,
                1.0 < new < prev,
                new > 1.0 and new >= prev and stall >= 20,
                new > 1.0 and new >= prev and stall < 20,
            ]
            self.assertEqual(sum(expected), 1)
            self.assertEqual(case, ["success", "improved", "stalled", "not_improved"][expected.index(True)])


class TestActorCritic(unittest.TestCase):
    def setUp(self):
        self.model = ActorCritic(4, 8, TINY, np.random.default_rng(0))

    def test_forward_matches_manual_product(self):
        state = EnvState(((12, 40), (77, 3)))
        x = state.vector()
        w0, b0, w1, b1, w2, b2 = self.model.actor.params
        expected = softmax(relu(relu(x @ w0 + b0) @ w1 + b1) @ w2 + b2)
        np.testing.assert_allclose(actor_forward(self.model, state), expected, rtol=0, atol=1e-12)
        c = self.model.critic.params
        hidden = relu(relu(relu(x @ c[0] + c[1]) @ c[2] + c[3]) @ c[4] + c[5])
        self.assertAlmostEqual(critic_forward(self.model, state), float((hidden @ c[6] + c[7])[0]), places=12)

    def test_fresh_policy_is_near_uniform(self):
        model = ActorCritic(10, 20, A3cConfig(seed=0))
        for state in np.random.default_rng(2).random((100, 10)):
            probs = actor_forward(model, state)
            self.assertLess(probs.max() / probs.min(), 1.5)

    def test_probabilities_sum_to_one(self):
        for state in np.random.default_rng(3).random((1000, 4)):
            probs = actor_forward(self.model, state)
            self.assertTrue(np.all(probs > 0))
            self.assertAlmostEqual(probs.sum(), 1.0, delta=1e-9)

    def test_non_finite_parameters_detected(self):
        self.model.actor.params[0][0, 0] = np.nan
        with self.assertRaises(UpdateError):
            actor_forward(self.model, np.zeros(4))


class TestNStepUpdate(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.model = ActorCritic(4, 8, TINY, np.random.default_rng(1))

    def test_returns(self):
        np.testing.assert_allclose(n_step_returns([1.0, 2.0], 3.0, 0.9), [1.0 + 0.9 * 2.0 + 0.81 * 3.0, 2.0 + 2.7])
        np.testing.assert_allclose(n_step_returns([0.5], 0.0, 0.9), [0.5])

    def test_single_terminal_transition(self):
        trajectory = random_transitions(self.rng, 1, terminal=True)
        cfg = TINY.model_copy(update={"reward": RewardConfig(gamma=0.9)})
        _, _, info = trajectory_gradients(self.model, trajectory, 0.0, cfg)
        expected = trajectory[0].reward - critic_forward(self.model, trajectory[0].state)
        self.assertAlmostEqual(info["advantages"][0], expected, places=12)

    def test_gradients_match_finite_differences(self):
        cfg = TINY.model_copy(update={"entropy_beta": 0.05})
        for _ in range(10):
            model = ActorCritic(4, 8, TINY, np.random.default_rng(int(self.rng.integers(1 << 30))))
            trajectory = random_transitions(self.rng, 5)
            actor_grads, critic_grads, info = trajectory_gradients(model, trajectory, 0.7, cfg)
            states = np.array([t.state.vector() for t in trajectory])
            actions = np.array([t.action for t in trajectory])

            def actor_objective():
                return actor_loss(model, states, actions, info["advantages"], cfg.entropy_beta)

            def critic_objective():
                return critic_loss(model, states, info["returns"])

            for param, grad in zip(model.actor.params, actor_grads):
                np.testing.assert_allclose(grad, numeric_gradient(actor_objective, param, 1e-5), rtol=1e-4, atol=1e-8)
            for param, grad in zip(model.critic.params, critic_grads):
                np.testing.assert_allclose(grad, numeric_gradient(critic_objective, param, 1e-5), rtol=1e-4, atol=1e-8)

    def test_update_increments_version(self):
        store = GlobalStore(self.model, TINY)
        before = [p.copy() for p in self.model.critic.params]
        n_step_update(store, random_transitions(self.rng, 3), 0.0, TINY, worker_id=2)
        self.assertEqual(store.version, 1)
        self.assertEqual(store.updates_by_worker, {2: 1})
        self.assertFalse(all(np.array_equal(a, b) for a, b in zip(before, self.model.critic.params)))

    def test_trajectory_length_checked(self):
        with self.assertRaises(ValueError):
            trajectory_gradients(self.model, random_transitions(self.rng, 9), 0.0, TINY)
        with self.assertRaises(ValueError):
            trajectory_gradients(self.model, [], 0.0, TINY)

    def test_checkpoint_round_trip(self):
        store = GlobalStore(self.model, TINY)
        for _ in range(3):
            n_step_update(store, random_transitions(self.rng, 4), 0.2, TINY)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(store, Path(tmp) / "agent.npz")
            loaded = load_checkpoint(path)
        self.assertEqual(loaded.version, 3)
        self.assertEqual(loaded.actor_optimizer.step_count, 3)
        for a, b in zip(store.model.actor.params + store.model.critic.params,
                        loaded.model.actor.params + loaded.model.critic.params):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(store.critic_optimizer.v, loaded.critic_optimizer.v):
            np.testing.assert_array_equal(a, b)


class TestDesignCache(unittest.TestCase):
    def test_memoized(self):
        cache = DesignCache()
        calls = []

        def compute():
            calls.append(1)
            return Evaluation((1, 2), (50.0, 60.0), 3.5)

        first = cache.get_or_compute((1, 2), compute)
        second = cache.get_or_compute((1, 2), compute)
        self.assertIs(first, second)
        self.assertEqual(len(calls), 1)
        self.assertEqual(cache.counters(), (1, 1))
        self.assertEqual(cache.best.merit, 3.5)

    def test_seeded_value_returned_exactly(self):
        cache = DesignCache()
        seeded = Evaluation((4,), (120.0,), 0.123456789)
        cache.seed((4,), seeded)
        result = cache.get_or_compute((4,), lambda: Evaluation((4,), (1.0,), 99.0))
        self.assertEqual(result.merit, 0.123456789)
        self.assertEqual(cache.computed, 0)

    def test_concurrent_callers_compute_once(self):
        cache = DesignCache()
        calls = []
        lock = threading.Lock()

        def compute():
            with lock:
                calls.append(1)
            time.sleep(0.05)
            return Evaluation((7,), (10.0,), 1.0)

        threads = [threading.Thread(target=cache.get_or_compute, args=((7,), compute)) for _ in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        self.assertEqual(len(calls), 1)
        self.assertEqual(cache.counters(), (7, 1))

    def test_failures_are_remembered(self):
        cache = DesignCache()

        def broken():
            raise ValueError("no data")

        for _ in range(2):
            with self.assertRaises(ValueError):
                cache.get_or_compute((0,), broken)
        self.assertEqual(cache.evaluations(), [])


class TestDesignEnvironment(unittest.TestCase):
    def setUp(self):
        self.db = constant_db([1.38, 2.3, 3.9 + 0.02j, 1.5])
        self.env_map = EnvironmentMap([0, 1, 2, 3], ["M0", "M1", "M2", "M3"], ["Other"] * 4,
                                      [[0.1, 0.1], [0.9, 0.1], [0.5, 0.9], [0.5, 0.5]])
        grid = np.linspace(400, 800, 21)
        self.task = SimpleNamespace(layer_count=2, frozen_layers={}, target=TargetSpectrum(grid, np.ones(21)),
                                    incidence=IncidenceSpec((0.0,)), substrate=3, incident_medium=1.0)
        self.ga_cfg = GaConfig(population_size=10, generations=5, seed=0)

    def test_same_tuple_is_optimized_once(self):
        env = DesignEnvironment(self.env_map, self.db, self.task, self.ga_cfg)
        first = env.evaluate_state(EnvState(((5, 5), (90, 10))))
        second = env.evaluate_state(EnvState(((12, 8), (88, 15))))
        self.assertEqual(first.materials, (0, 1))
        self.assertEqual(second, first)
        self.assertEqual(env.cache.counters(), (1, 1))
        self.assertEqual(len(first.thicknesses), 2)
        self.assertTrue(all(10 <= t <= 200 for t in first.thicknesses))

    def test_thickness_search_is_seeded_per_tuple(self):
        one = DesignEnvironment(self.env_map, self.db, self.task, self.ga_cfg).evaluate_materials((2, 1))
        two = DesignEnvironment(self.env_map, self.db, self.task, self.ga_cfg).evaluate_materials((2, 1))
        self.assertEqual(one, two)

    def test_frozen_layers(self):
        task = SimpleNamespace(**{**vars(self.task), "frozen_layers": {2: "M2"}})
        env = DesignEnvironment(self.env_map, self.db, task, self.ga_cfg)
        self.assertEqual(env.movable_layers, [1])
        self.assertEqual(len(env.action_table), 4)
        self.assertEqual(env.materials_for(EnvState(((5, 5), (90, 10)))), (0, 2))
        with self.assertRaises(ValueError):
            DesignEnvironment(self.env_map, self.db, SimpleNamespace(**{**vars(self.task), "frozen_layers": {3: 0}}))

    def test_band_absorption_of_optimized_design(self):
        task = SimpleNamespace(**{**vars(self.task), "band_nm": (400.0, 600.0)})
        evaluation = DesignEnvironment(self.env_map, self.db, task, self.ga_cfg).evaluate_materials((2, 1))
        optics = StackOptics.from_materials((2, 1), self.db, task.target.wavelengths_nm, 1.0, 3)
        spectrum = optics.spectra(evaluation.thicknesses, task.incidence)[0]
        in_band = spectrum.wavelengths_nm <= 600.0
        self.assertAlmostEqual(evaluation.band_absorption, float(np.mean(spectrum.absorption[in_band])), places=12)

        self.assertIsNone(DesignEnvironment(self.env_map, self.db, self.task, self.ga_cfg)
                          .evaluate_materials((2, 1)).band_absorption)
        reflect = TargetSpectrum(task.target.wavelengths_nm, np.zeros(21), quantity=Quantity.R)
        task_r = SimpleNamespace(**{**vars(task), "target": reflect})
        self.assertIsNone(DesignEnvironment(self.env_map, self.db, task_r, self.ga_cfg)
                          .evaluate_materials((2, 1)).band_absorption)


class TestWorkers(unittest.TestCase):
    def test_zero_budget(self):
        env = toy_environment()
        store, summaries = run_workers(env, A3cConfig(workers=2, seed=0), 0)
        self.assertEqual(store.version, 0)
        self.assertEqual(summaries, [])

    def test_update_accounting_with_four_workers(self):
        env = toy_environment(layer_count=2)
        cfg = A3cConfig(workers=4, seed=1, max_episode_steps=30)
        store, summaries = run_workers(env, cfg, 40)
        self.assertEqual([s.episode for s in summaries], list(range(40)))
        self.assertGreater(store.version, 0)
        self.assertEqual(store.version, sum(store.updates_by_worker.values()))
        hits, misses = env.cache.counters()
        self.assertEqual(misses, env.cache.computed)
        self.assertEqual(misses, len(env.cache))

    def test_single_worker_is_deterministic(self):
        cfg = A3cConfig(workers=1, seed=5, max_episode_steps=25)
        runs = []
        for _ in range(2):
            env = toy_environment(layer_count=2)
            store, summaries = run_workers(env, cfg, 15)
            runs.append(([s.row() for s in summaries], store.model.actor.get_flat()))
        self.assertEqual(runs[0][0], runs[1][0])
        np.testing.assert_array_equal(runs[0][1], runs[1][1])

    def test_evaluation_errors_end_episodes(self):
        def broken(materials):
            raise ValueError("material data missing")

        env = toy_environment(optimizer=broken)
        with self.assertLogs("a3c", level="WARNING"):
            store, summaries = run_workers(env, A3cConfig(workers=2, seed=0), 6)
        self.assertEqual({s.terminal_reason for s in summaries}, {"failed"})
        self.assertEqual(store.version, 0)

    def test_band_success_ends_episode_at_start(self):
        def absorbing(materials):
            return Evaluation(tuple(materials), (100.0,), 10.0, 10.0, band_absorption=0.97)

        env = toy_environment(optimizer=absorbing)
        cfg = A3cConfig(workers=1, seed=0, reward=RewardConfig(success_band_absorption=0.95))
        store, summaries = run_workers(env, cfg, 5)
        self.assertEqual([s.terminal_reason for s in summaries], ["success"] * 5)
        self.assertEqual([s.steps for s in summaries], [0] * 5)
        self.assertEqual(store.version, 0)

    def test_agent_learns_toy_task(self):
        cfg = A3cConfig(
            workers=4,
            seed=0,
            learning_rate=1e-3,
            max_episode_steps=200,
            reward=RewardConfig(success_merit_threshold=0.5),
        )
        env = toy_environment()
        _, summaries = run_workers(env, cfg, 2000)
        success = np.array([s.terminal_reason == "success" for s in summaries])
        first, last = success[:200].mean(), success[-200:].mean()
        self.assertGreater(last, first + 0.2)
        self.assertGreaterEqual(last, 3 * first)


if __name__ == "__main__":
    unittest.main()

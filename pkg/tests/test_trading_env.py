import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forex_a3c.market_data import DataError, DatasetRegistry, random_walk_series, synthetic_series
from forex_a3c.trading_env import (Action, EnvConfig, EpisodeDescriptor, TradingEnv,
                                   history_matrix)
from oracles import constant_long_reward_ref


def test_action_deltas():
    assert [a.delta for a in Action] == [1, -1, 0]
    assert Action.parse("short") is Action.SHORT


def test_sc_mode_single_pair(rw_registry, rng):
    env = TradingEnv(DatasetRegistry({"EURUSD": rw_registry.pairs["EURUSD"]}), EnvConfig(16, 50))
    assert all(env.reset(rng)[1].pair == "EURUSD" for _ in range(20))
    with pytest.raises(DataError):
        TradingEnv(rw_registry, EnvConfig(16, 50, "sc"))
    env = TradingEnv(rw_registry, EnvConfig(16, 50, "sc", "GBPUSD"))
    assert {env.reset(rng)[1].pair for _ in range(20)} == {"GBPUSD"}


def test_mc_mode_uniform_pairs(rw_registry):
    env = TradingEnv(rw_registry, EnvConfig(16, 50, "mc"))
    rng = np.random.default_rng(1)
    picks = [env.descriptor_for_seed(int(rng.integers(2**63 - 1))).pair for _ in range(10_000)]
    share = picks.count("EURUSD") / len(picks)
    assert 0.45 <= share <= 0.55


def test_initial_history_neutral(rw_registry, rng):
    env = TradingEnv(rw_registry, EnvConfig(16, 50, "mc"))
    obs, _ = env.reset(rng)
    assert obs.features.shape == (16, 5) and obs.history.shape == (16, 3)
    assert np.all(obs.history == np.eye(3)[[2] * 16])
    assert obs.flat_history.shape == (48,)


def test_step_reward_examples():
    s = synthetic_series([1.1020] * 17 + [1.1080] + [1.1] * 5)
    reg = DatasetRegistry({"P": s})
    for action, expected in [(Action.LONG, 0.00544465), (Action.SHORT, -0.00544465)]:
        env = TradingEnv(reg, EnvConfig(16, 3))
        env.reset_to(EpisodeDescriptor("P", 16))
        r = env.step(action)
        assert r.reward == pytest.approx(expected, abs=5e-9)
        assert r.reward == action.delta * r.z
    env = TradingEnv(reg, EnvConfig(16, 3))
    env.reset_to(EpisodeDescriptor("P", 16))
    assert env.step(Action.NEUTRAL).reward == 0.0


def test_done_and_step_after_done(rw_registry, rng):
    env = TradingEnv(rw_registry, EnvConfig(8, 5, "mc"))
    env.reset(rng)
    dones = [env.step(Action.LONG).done for _ in range(5)]
    assert dones == [False] * 4 + [True]
    with pytest.raises(RuntimeError):
        env.step(Action.LONG)


def test_history_tracks_actions(rw_registry, rng):
    env = TradingEnv(rw_registry, EnvConfig(4, 10, "mc"))
    env.reset(rng)
    acts = [0, 1, 1, 2, 0, 1]
    for a in acts:
        obs = env.step(a).observation
    assert np.array_equal(obs.history, history_matrix(acts, 4))
    assert np.array_equal(obs.history, np.eye(3)[acts[-4:]])
    assert np.all(obs.history.sum(axis=1) == 1)


def test_infeasible_start():
    reg = DatasetRegistry({"P": random_walk_series(30)})
    env = TradingEnv(reg, EnvConfig(16, 20))
    with pytest.raises(DataError):
        env.reset(np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(0, 2), min_size=1, max_size=30))
def test_antisymmetry_and_replay(seed, actions):
    reg = DatasetRegistry({"A": random_walk_series(120, seed=seed % 97, pair_name="A")})
    env = TradingEnv(reg, EnvConfig(8, len(actions), "sc"))
    _, desc = env.reset(np.random.default_rng(seed))
    first = [env.step(a).reward for a in actions]
    env.reset_to(EpisodeDescriptor.from_text(desc.to_text()))
    assert [env.step(a).reward for a in actions] == first
    env.reset_to(desc)
    longs = [env.step(Action.LONG).reward for _ in actions]
    env.reset_to(desc)
    shorts = [env.step(Action.SHORT).reward for _ in actions]
    assert longs == [-s for s in shorts]
    closes = reg.pairs["A"].close
    assert sum(longs) == pytest.approx(constant_long_reward_ref(closes, desc.start, len(actions)),
                                       rel=0, abs=1e-12)


def test_observation_shapes_constant(rw_registry, rng):
    env = TradingEnv(rw_registry, EnvConfig(16, 40, "mc"))
    obs, _ = env.reset(rng)
    shapes = {(obs.features.shape, obs.history.shape)}
    done = False
    while not done:
        res = env.step(rng.integers(3))
        shapes.add((res.observation.features.shape, res.observation.history.shape))
        done = res.done
    assert shapes == {((16, 5), (16, 3))}

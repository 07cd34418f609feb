import math
from collections import Counter

import numpy as np
import pytest

from forex_a3c import async_trainer
from forex_a3c.async_trainer import (GlobalStore, canary_pattern, canary_valid, collect_segment,
                                     run_a3c)
from forex_a3c.neural import init_parameters
from forex_a3c.neural.network import NumericError
from forex_a3c.optim import AdamConfig
from forex_a3c.rl import TrainConfig, TrainingAborted, a3c_segment_gradients
from conftest import env_factory


def make_store(tiny_arch, mode="lock", **kw):
    return GlobalStore(init_parameters(np.random.default_rng(0), tiny_arch), mode, AdamConfig(), **kw)


def test_canary_detects_mixed_halves():
    a, b = canary_pattern(1), canary_pattern(2)
    assert canary_valid(np.array([a, b])).all()
    wa, wb = np.array([a, b]).view(np.uint64)
    torn = np.array([(wa & np.uint64(0xFFFFFFFF00000000)) | (wb & np.uint64(0xFFFFFFFF))],
                    dtype=np.uint64).view(np.float64)
    assert not canary_valid(torn).any()
    torn = np.array([(wb & np.uint64(0xFFFFFFFF00000000)) | (wa & np.uint64(0xFFFFFFFF))],
                    dtype=np.uint64).view(np.float64)
    assert not canary_valid(torn).any()
    tokens = [canary_pattern(k) for k in range(1, 2000)]
    assert canary_valid(np.array(tokens)).all()


def test_zero_gradient_update(tiny_arch):
    store = make_store(tiny_arch)
    before = store.params.flat.copy()
    assert store.apply_update(np.zeros_like(before)) == 1
    assert store.apply_update(np.zeros_like(before)) == 2
    assert np.array_equal(store.params.flat, before)


def test_update_validation(tiny_arch):
    store = make_store(tiny_arch, "nolock")
    with pytest.raises(ValueError, match="shape"):
        store.apply_update(np.zeros(3))
    g = np.zeros_like(store.params.flat)
    g[0] = np.inf
    with pytest.raises(NumericError):
        store.apply_update(g)
    assert store.step_counter == 0
    with pytest.raises(ValueError):
        make_store(tiny_arch, "sometimes")


def test_overlap_flag_counts(tiny_arch):
    store = make_store(tiny_arch, instrumented=True, shared=False)
    store._enter()
    store._enter()
    store._leave()
    store._leave()
    assert store.overlaps == 1


def test_terminal_segment_bootstraps_zero(rw_registry, tiny_config):
    env = env_factory(rw_registry, tiny_config.window, 5)()
    p = init_parameters(np.random.default_rng(0), tiny_config.architecture())
    rng = np.random.default_rng(0)
    obs, _ = env.reset(rng)
    traj = collect_segment(p, env, obs, rng, 5)
    assert traj.dones[-1]
    a3c_segment_gradients(p, traj, tiny_config)
    assert traj.bootstrap_value == 0.0
    obs, _ = env.reset(rng)
    traj = collect_segment(p, env, obs, rng, 3)
    a3c_segment_gradients(p, traj, tiny_config)
    assert traj.bootstrap_value != 0.0


@pytest.mark.parametrize("backend", ["thread", "process"])
def test_lock_exclusive_and_budget(rw_registry, tiny_config, backend):
    cfg = TrainConfig(**{**tiny_config.to_dict(), "workers": 3, "total_steps": 400})
    res = run_a3c(env_factory(rw_registry, cfg.window, cfg.episode_len), cfg, "lock",
                  backend=backend, instrumented=True)
    assert res.stats["overlaps"] == 0
    assert res.stats["torn"] == 0
    updates = [r for r in res.log if r["kind"] == "update"]
    target = math.ceil(cfg.total_steps / cfg.n_steps)
    assert target <= res.stats["updates"] <= target + cfg.workers
    assert sorted(r["update"] for r in updates) == list(range(1, res.stats["updates"] + 1))
    assert res.params.is_finite()


def test_nolock_finite_no_torn(rw_registry, tiny_config):
    cfg = TrainConfig(**{**tiny_config.to_dict(), "workers": 5, "total_steps": 2000})
    res = run_a3c(env_factory(rw_registry, cfg.window, cfg.episode_len), cfg, "nolock",
                  instrumented=True)
    assert res.params.is_finite()
    assert res.stats["torn"] == 0 and res.stats["canary_checks"] > 0
    counts = Counter(r["worker_id"] for r in res.log if r["kind"] == "update")
    assert set(counts) == set(range(5))
    assert max(counts.values()) <= 3 * min(counts.values())


def test_updates_per_episode(rw_registry, tiny_config):
    cfg = TrainConfig(**{**tiny_config.to_dict(), "workers": 1, "total_steps": 120})
    res = run_a3c(env_factory(rw_registry, cfg.window, cfg.episode_len), cfg, "lock", backend="thread")
    kinds = [r["kind"] for r in res.log]
    first_episode = kinds.index("episode")
    assert kinds[:first_episode].count("update") == cfg.episode_len // cfg.n_steps


def test_single_worker_lock_reproducible(rw_registry, tiny_config):
    cfg = TrainConfig(**{**tiny_config.to_dict(), "workers": 1, "total_steps": 150})
    fac = env_factory(rw_registry, cfg.window, cfg.episode_len)
    a = run_a3c(fac, cfg, "lock")
    b = run_a3c(fac, cfg, "lock")
    assert a.params.equal(b.params)


def test_nonfinite_gradient_skipped(rw_registry, tiny_config, monkeypatch):
    calls = {"n": 0}
    real = async_trainer.a3c_segment_gradients

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise NumericError("injected")
        return real(*args, **kw)

    monkeypatch.setattr(async_trainer, "a3c_segment_gradients", flaky)
    cfg = TrainConfig(**{**tiny_config.to_dict(), "workers": 1, "total_steps": 50})
    res = run_a3c(env_factory(rw_registry, cfg.window, cfg.episode_len), cfg, "lock", backend="thread")
    skips = [r for r in res.log if r["kind"] == "skip"]
    assert len(skips) == 1 and "injected" in skips[0]["reason"]
    assert res.stats["updates"] == 10


@pytest.mark.parametrize("backend", ["thread", "process"])
def test_worker_failure_aborts_with_params(rw_registry, tiny_config, backend):
    def broken():
        raise RuntimeError("env exploded")

    cfg = TrainConfig(**{**tiny_config.to_dict(), "workers": 2})
    with pytest.raises(TrainingAborted, match="env exploded") as exc:
        run_a3c(broken, cfg, "nolock", backend=backend)
    assert exc.value.params is not None and exc.value.params.is_finite()

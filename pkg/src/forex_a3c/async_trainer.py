"""Multi-worker A3C with a shared global store and shared Adam state.

Two update disciplines:

``lock``
    the whole read-accumulate-write of an Adam step runs under one mutex.
``nolock``
    Hogwild-style: workers apply Adam concurrently with no exclusive section.
    Each element is read and written with a single aligned 8-byte access, so no
    number is ever torn, but a tensor may mix the effects of several updates.

Workers are forked processes sharing anonymous memory (``backend="process"``)
or threads in this process (``backend="thread"``). The thread backend exists for
instrumentation and deterministic reference runs; only processes give real
parallel speedup.
"""
from __future__ import annotations

import logging
import multiprocessing as mp
import queue as queue_mod
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .neural import ParameterSet, init_parameters
from .neural.network import NumericError
from .optim import AdamConfig, adam_step, clip_grad_norm
from .rl import TrainConfig, TrainingAborted, TrainResult, Trajectory, a3c_segment_gradients, act
from .trading_env import TradingEnv

log = logging.getLogger(__name__)

MODES = ("lock", "nolock")

# control block slots
_COUNTER, _ACTIVE, _OVERLAPS, _TORN, _CANARY_WRITES, _CANARY_CHECKS = range(6)
_CANARY_SALT = 0x9E3779B1


def _canary_low(hi: np.ndarray) -> np.ndarray:
    return (hi * np.uint64(_CANARY_SALT) + np.uint64(0x7F4A7C15)) & np.uint64(0xFFFFFFFF)


def canary_pattern(token: int) -> np.float64:
    """A float64 whose low word is a hash of its high word.

    Any value assembled from halves of two different patterns fails
    :func:`canary_valid`.
    """
    hi = np.uint64(0x3FF00000 | (int(token) & 0xFFFFF))
    word = (hi << np.uint64(32)) | _canary_low(hi)
    return np.array([word], dtype=np.uint64).view(np.float64)[0]


def element_copy(src: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Copy float64s with one 8-byte load and store per element.

    memcpy (what np.copyto uses on contiguous buffers) may move a large block with
    byte-granular string instructions that can be interrupted inside an element,
    so a concurrent writer can leave the copy holding halves of two values. An
    integer ufunc reads each element as a whole word.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    if out is None:
        out = np.empty_like(src)
    np.bitwise_or(src.view(np.uint64), np.uint64(0), out=out.view(np.uint64))
    return out


def canary_valid(values: np.ndarray) -> np.ndarray:
    # one snapshot so each element is read exactly once; checking a live buffer in
    # two passes would pair a high word with a later low word
    words = element_copy(values).view(np.uint64)
    hi = words >> np.uint64(32)
    return (words & np.uint64(0xFFFFFFFF)) == _canary_low(hi)


def _shared_array(n: int, typecode: str = "d", shared: bool = True) -> np.ndarray:
    dtype = np.float64 if typecode == "d" else np.int64
    if not shared:
        return np.zeros(n, dtype=dtype)
    raw = mp.RawArray(typecode, max(n, 1))
    return np.frombuffer(raw, dtype=dtype, count=n)


class GlobalStore:
    """Global parameters, shared Adam moments and the update counter.

    Create it in the parent before workers fork; every buffer is anonymous shared
    memory when ``shared`` is true.
    """

    def __init__(self, params: ParameterSet, mode: str, adam: AdamConfig, shared: bool = True,
                 ctx=None, instrumented: bool = False, canary_size: int = 4096):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.adam = adam
        self.arch = params.arch
        n = params.flat.size
        self.params = ParameterSet(params.arch, _shared_array(n, "d", shared))
        self.params.copy_from(params)
        self.m = _shared_array(n, "d", shared)
        self.v = _shared_array(n, "d", shared)
        self.ctl = _shared_array(8, "q", shared)
        self.instrumented = instrumented
        self.canary = _shared_array(canary_size if instrumented else 0, "d", shared)
        if instrumented:
            self.canary[:] = canary_pattern(0)
        locks = ctx if ctx is not None else threading
        self.update_lock = locks.Lock()
        self.counter_lock = locks.Lock()

    @property
    def step_counter(self) -> int:
        return int(self.ctl[_COUNTER])

    @property
    def overlaps(self) -> int:
        return int(self.ctl[_OVERLAPS])

    @property
    def torn(self) -> int:
        return int(self.ctl[_TORN])

    @property
    def canary_checks(self) -> int:
        return int(self.ctl[_CANARY_CHECKS])

    def _bump(self) -> int:
        with self.counter_lock:
            self.ctl[_COUNTER] += 1
            return int(self.ctl[_COUNTER])

    def _enter(self) -> None:
        self.ctl[_ACTIVE] += 1
        if self.ctl[_ACTIVE] > 1:
            self.ctl[_OVERLAPS] += 1

    def _leave(self) -> None:
        self.ctl[_ACTIVE] -= 1

    def _apply(self, grads: np.ndarray) -> int:
        if self.instrumented:
            self._enter()
        step = self._bump()
        adam_step(self.params.flat, grads, self.m, self.v, step, self.adam)
        if self.instrumented:
            np.copyto(self.canary, canary_pattern(step))
            self.ctl[_CANARY_WRITES] += 1
            self._leave()
        return step

    def apply_update(self, grads: np.ndarray) -> int:
        """One shared-Adam step with ``grads`` (flat); returns the new step counter."""
        grads = np.asarray(grads)
        if grads.shape != self.params.flat.shape:
            raise ValueError(f"gradient shape {grads.shape} != {self.params.flat.shape}")
        if not np.isfinite(grads).all():
            raise NumericError("non-finite gradient submitted to global store")
        if self.mode == "lock":
            with self.update_lock:
                return self._apply(grads)
        return self._apply(grads)

    def read_params(self, out: ParameterSet) -> None:
        """theta' <- theta. In nolock mode the copy may straddle concurrent updates."""
        element_copy(self.params.flat, out.flat)
        if self.instrumented:
            bad = int(np.count_nonzero(~canary_valid(self.canary)))
            if bad:
                with self.counter_lock:
                    self.ctl[_TORN] += bad
            self.ctl[_CANARY_CHECKS] += 1

    def snapshot(self) -> ParameterSet:
        return ParameterSet(self.arch, element_copy(self.params.flat))

    def budget_exhausted(self, config: TrainConfig) -> bool:
        return self.step_counter * config.n_steps >= config.total_steps


@dataclass
class WorkerState:
    worker_id: int
    local: ParameterSet
    grads: ParameterSet
    env: TradingEnv
    rng: np.random.Generator
    log: List[dict] = field(default_factory=list)

    @classmethod
    def create(cls, worker_id: int, store: GlobalStore, env: TradingEnv, base_seed: int):
        local = store.snapshot()
        return cls(worker_id, local, local.zeros_like(), env,
                   np.random.default_rng(base_seed + worker_id))


def collect_segment(params: ParameterSet, env: TradingEnv, obs, rng, n_steps: int) -> Trajectory:
    """Act for up to ``n_steps`` or until the episode ends."""
    traj = Trajectory()
    while len(traj) < n_steps:
        action, logp = act(params, obs, rng)
        res = env.step(action)
        traj.append(obs, action, res.reward, logp, res.done)
        obs = res.observation
        if res.done:
            break
    traj.next_observation = obs
    return traj


def worker_loop(worker: WorkerState, store: GlobalStore, config: TrainConfig,
                trace: bool = False, t_start: Optional[float] = None) -> List[dict]:
    """Sync, act ``n_steps``, accumulate gradients, update, repeat until the budget is spent."""
    t_start = time.perf_counter() if t_start is None else t_start
    env, rng, records = worker.env, worker.rng, worker.log
    obs, desc = env.reset(rng)
    episode_reward = 0.0
    last_update = 0
    while not store.budget_exhausted(config):
        store.read_params(worker.local)
        traj = collect_segment(worker.local, env, obs, rng, config.n_steps)
        obs = traj.next_observation
        episode_reward += float(np.sum(traj.rewards))
        worker.grads.flat[:] = 0.0
        try:
            _, stats = a3c_segment_gradients(worker.local, traj, config, worker.grads)
            norm = clip_grad_norm(worker.grads.flat, config.max_grad_norm)
            if not np.isfinite(norm):
                raise NumericError("non-finite gradient norm")
        except NumericError as exc:
            log.warning("worker %d: skipping update (%s)", worker.worker_id, exc)
            records.append({"kind": "skip", "worker_id": worker.worker_id, "reason": str(exc),
                            "update": last_update, "wall": time.perf_counter() - t_start})
        else:
            update = last_update = store.apply_update(worker.grads.flat)
            rec = {
                "kind": "update", "worker_id": worker.worker_id, "update": update,
                "steps": stats.steps, "segment_reward": stats.reward_sum,
                "policy_loss": stats.policy_loss, "value_loss": stats.value_loss,
                "entropy": stats.entropy, "grad_norm": norm,
                "wall": time.perf_counter() - t_start,
            }
            if trace:
                # only meaningful when no other worker can interleave
                rec["param_digest"] = store.params.digest()
            records.append(rec)
        if traj.dones[-1]:
            records.append({"kind": "episode", "worker_id": worker.worker_id, "pair": desc.pair,
                            "start": desc.start, "seed": desc.seed, "reward_sum": episode_reward,
                            "update": last_update, "wall": time.perf_counter() - t_start})
            episode_reward = 0.0
            obs, desc = env.reset(rng)
    return records


def _merge(records: List[dict]) -> List[dict]:
    # episode and skip records carry the worker's latest update index
    return sorted(records, key=lambda r: (r["update"], r["kind"] != "update", r["wall"],
                                          r["worker_id"]))


def _process_main(worker_id, store, env_factory, config, trace, t_start, results):
    try:
        worker = WorkerState.create(worker_id, store, env_factory(), config.seed)
        records = worker_loop(worker, store, config, trace, t_start)
        results.put(("ok", worker_id, records))
    except BaseException:
        results.put(("error", worker_id, traceback.format_exc()))


def run_a3c(env_factory: Callable[[], TradingEnv], config: TrainConfig, mode: str = "lock",
            params: Optional[ParameterSet] = None, backend: str = "process",
            instrumented: bool = False, trace: bool = False) -> TrainResult:
    """Train ``config.workers`` workers against one global store.

    Global parameters are initialised from ``config.seed``; worker ``k`` seeds its
    generator with ``config.seed + k``. Returns the global parameters.
    """
    mode = mode.lower().replace("a3c-", "")
    if backend == "process" and "fork" not in mp.get_all_start_methods():
        backend = "thread"
    if params is None:
        params = init_parameters(np.random.default_rng(config.seed), config.architecture())
    ctx = mp.get_context("fork") if backend == "process" else None
    store = GlobalStore(params, mode, config.adam(), shared=backend == "process", ctx=ctx,
                        instrumented=instrumented)
    t_start = time.perf_counter()
    records: List[dict] = []
    errors = []
    if backend == "process":
        results = ctx.Queue()
        procs = [ctx.Process(target=_process_main, daemon=True,
                             args=(k, store, env_factory, config, trace, t_start, results))
                 for k in range(config.workers)]
        for p in procs:
            p.start()
        pending = set(range(config.workers))
        while pending:
            try:
                status, wid, payload = results.get(timeout=1.0)
            except queue_mod.Empty:
                dead = [k for k in pending if not procs[k].is_alive() and procs[k].exitcode != 0]
                if dead:
                    errors.extend((k, f"worker exited with code {procs[k].exitcode}") for k in dead)
                    pending -= set(dead)
                continue
            pending.discard(wid)
            if status == "ok":
                records.extend(payload)
            else:
                errors.append((wid, payload))
                for p in procs:
                    if p.is_alive():
                        p.terminate()
                break
        for p in procs:
            p.join(timeout=10)
    elif backend == "thread":
        out: dict = {}

        def run(k):
            try:
                worker = WorkerState.create(k, store, env_factory(), config.seed)
                out[k] = worker_loop(worker, store, config, trace, t_start)
            except BaseException:
                errors.append((k, traceback.format_exc()))

        threads = [threading.Thread(target=run, args=(k,), daemon=True)
                   for k in range(config.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for k in sorted(out):
            records.extend(out[k])
    else:
        raise ValueError(f"unknown backend {backend!r}")
    wall = time.perf_counter() - t_start
    final = store.snapshot()
    merged = _merge(records)
    if errors:
        wid, msg = errors[0]
        raise TrainingAborted(f"worker {wid} failed:\n{msg}", final, merged)
    stats = {
        "mode": mode, "backend": backend, "workers": config.workers,
        "updates": store.step_counter, "wall_time": wall,
        "overlaps": store.overlaps if instrumented else None,
        "torn": store.torn if instrumented else None,
        "canary_checks": store.canary_checks if instrumented else None,
    }
    return TrainResult(final, merged, stats)

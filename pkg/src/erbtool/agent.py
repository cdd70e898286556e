"""Linear Q-learning with selective experience replay across sequential tasks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import gridworld as gw
from .compressors import CompressionSpec, compress
from .replay import CompressedERB, DimensionError, Experience, ReplayBuffer


@dataclass(eq=False)
class QParams:
    """Action values Q(s, a) = weights[a] . features(s)."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (num_actions, feature_dim) matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @classmethod
    def zeros(cls, num_actions: int, feature_dim: int) -> "QParams":
        return cls(np.zeros((num_actions, feature_dim)))

    @property
    def num_actions(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "QParams":
        return QParams(self.weights.copy())


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    lr: float = 0.05
    batch_size: int = 48
    episodes_per_round: int = 500
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.5
    target_sync_every: int = 200
    replay_mix: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.episodes_per_round < 1 or self.target_sync_every < 1:
            raise ValueError("batch_size, episodes_per_round and target_sync_every must be >= 1")
        if not (0 <= self.epsilon_end <= self.epsilon_start <= 1):
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0 < self.epsilon_decay_fraction <= 1:
            raise ValueError("epsilon_decay_fraction must lie in (0, 1]")
        if not 0 <= self.replay_mix <= 1:
            raise ValueError("replay_mix must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def epsilon(self, episode: int) -> float:
        """Linear anneal over the first `epsilon_decay_fraction` of the episodes."""
        span = self.epsilon_decay_fraction * self.episodes_per_round
        frac = min(1.0, episode / span)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    @property
    def history_per_batch(self) -> int:
        return math.floor(self.batch_size * self.replay_mix + 0.5)


@dataclass
class RoundReport:
    round_index: int
    trained_env: str
    per_env_mean_distance: dict[str, float]
    overall_mean_distance: float
    erb_path: str = ""


def q_values(params: QParams, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (params.feature_dim,):
        raise DimensionError(f"feature length {features.shape} != {params.feature_dim}")
    return params.weights @ features


def _batch_arrays(batch: Sequence[Experience]):
    if not batch:
        raise ValueError("empty batch")
    obs = np.stack([e.obs for e in batch])
    nxt = np.stack([e.next_obs for e in batch])
    actions = np.fromiter((e.action for e in batch), dtype=np.int64, count=len(batch))
    rewards = np.fromiter((e.reward for e in batch), dtype=np.float64, count=len(batch))
    terminal = np.fromiter((e.terminal for e in batch), dtype=bool, count=len(batch))
    return obs, actions, rewards, nxt, terminal


def _td_errors(w: np.ndarray, target_w: np.ndarray, arrays, gamma: float) -> np.ndarray:
    obs, actions, rewards, nxt, terminal = arrays
    if obs.shape[1] != w.shape[1]:
        raise DimensionError(f"feature length {obs.shape[1]} != {w.shape[1]}")
    if np.any(actions < 0) or np.any(actions >= w.shape[0]):
        raise ValueError("batch contains an action outside the parameter rows")
    bootstrap = (nxt @ target_w.T).max(axis=1)
    y = np.where(terminal, rewards, rewards + gamma * bootstrap)
    q = np.einsum("ij,ij->i", obs, w[actions])
    return y - q


def td_loss(params: QParams, target_params: QParams, batch: Sequence[Experience], cfg: TrainConfig) -> float:
    """Mean of 0.5 * (y - Q(s, a))^2 over the batch, with y from the target copy."""
    delta = _td_errors(params.weights, target_params.weights, _batch_arrays(batch), cfg.gamma)
    return float(0.5 * np.mean(delta * delta))


def _gradient(w: np.ndarray, target_w: np.ndarray, arrays, gamma: float) -> np.ndarray:
    obs, actions = arrays[0], arrays[1]
    delta = _td_errors(w, target_w, arrays, gamma)
    b = len(delta)
    coef = np.zeros((w.shape[0], b))
    coef[actions, np.arange(b)] = -delta / b
    return coef @ obs


def td_gradient(params: QParams, target_params: QParams, batch: Sequence[Experience], cfg: TrainConfig) -> np.ndarray:
    """Gradient of :func:`td_loss` w.r.t. the online weights (target held fixed)."""
    return _gradient(params.weights, target_params.weights, _batch_arrays(batch), cfg.gamma)


def td_update(params: QParams, target_params: QParams, batch: Sequence[Experience], cfg: TrainConfig) -> QParams:
    """One gradient-descent step on the mean TD loss of `batch`."""
    return QParams(params.weights - cfg.lr * td_gradient(params, target_params, batch, cfg))


def select_action(params: QParams | np.ndarray, features: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest action id."""
    w = params.weights if isinstance(params, QParams) else params
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(w.shape[0]))
    return int(np.argmax(w @ features))


class _FeatureTable:
    """Nonzero entries of each distinct observation array seen in a round.

    Rows are keyed by array identity; the table holds a reference to every
    registered array so identities stay valid. Rows are padded with
    (index 0, value 0), which contributes nothing to dot products or updates.
    """

    def __init__(self):
        self._rows: dict[int, int] = {}
        self._keep: list[np.ndarray] = []
        self.idx = np.zeros((64, 1), dtype=np.int64)
        self.val = np.zeros((64, 1))

    def row(self, arr: np.ndarray) -> int:
        r = self._rows.get(id(arr))
        if r is not None:
            return r
        nz = np.flatnonzero(arr)
        r = len(self._keep)
        if r == len(self.idx) or len(nz) > self.idx.shape[1]:
            rows = 2 * len(self.idx) if r == len(self.idx) else len(self.idx)
            width = max(self.idx.shape[1], len(nz))
            idx = np.zeros((rows, width), dtype=np.int64)
            val = np.zeros((rows, width))
            idx[:r, : self.idx.shape[1]] = self.idx[:r]
            val[:r, : self.val.shape[1]] = self.val[:r]
            self.idx, self.val = idx, val
        self.idx[r, : len(nz)] = nz
        self.val[r, : len(nz)] = arr[nz]
        self._rows[id(arr)] = r
        self._keep.append(arr)
        return r


class _Transitions:
    """Growable columnar store of (obs row, action, reward, next row, terminal)."""

    def __init__(self, capacity: int = 1024):
        self.n = 0
        self.obs = np.zeros(capacity, dtype=np.int64)
        self.act = np.zeros(capacity, dtype=np.int64)
        self.rew = np.zeros(capacity)
        self.nxt = np.zeros(capacity, dtype=np.int64)
        self.term = np.zeros(capacity, dtype=bool)

    def add(self, o: int, a: int, r: float, n: int, t: bool) -> None:
        if self.n == len(self.obs):
            for name in ("obs", "act", "rew", "nxt", "term"):
                old = getattr(self, name)
                new = np.zeros(max(2 * len(old), 1024), dtype=old.dtype)
                new[: self.n] = old
                setattr(self, name, new)
        i = self.n
        self.obs[i], self.act[i], self.rew[i], self.nxt[i], self.term[i] = o, a, r, n, t
        self.n += 1

    @classmethod
    def from_experiences(cls, table: _FeatureTable, exps: Sequence[Experience], repeats: Sequence[int]) -> "_Transitions":
        out = cls(max(1, len(exps)))
        for e in exps:
            out.add(table.row(e.obs), e.action, e.reward, table.row(e.next_obs), e.terminal)
        rep = np.asarray(repeats, dtype=np.int64)
        for name in ("obs", "act", "rew", "nxt", "term"):
            setattr(out, name, np.repeat(getattr(out, name)[: out.n], rep))
        out.n = int(rep.sum())
        return out


def _history_entries(history: Sequence[CompressedERB], obs_dim: int, num_actions: int):
    """Experiences and weights of the concatenated history.

    Entries are laid out in source-buffer order when provenance is known, so
    the unpacked pool does not depend on how a compressor ordered them.
    """
    exps: list[Experience] = []
    weights: list[int] = []
    for h in history:
        if h.obs_dim != obs_dim or h.num_actions != num_actions:
            raise DimensionError(
                f"history buffer {h.env_id!r} has obs_dim={h.obs_dim}, num_actions={h.num_actions}; "
                f"environment needs {obs_dim}, {num_actions}"
            )
        order = range(len(h.experiences))
        if h.source_index is not None:
            order = sorted(order, key=h.source_index.__getitem__)
        for i in order:
            exps.append(h.experiences[i])
            weights.append(h.weights[i])
    return exps, weights


def _sparse_td_step(w, target, table: _FeatureTable, obs_rows, actions, rewards, next_rows, terminal, cfg: TrainConfig) -> None:
    """In-place equivalent of ``w -= lr * td_gradient`` on sparse feature rows."""
    oi, ov = table.idx[obs_rows], table.val[obs_rows]
    ni, nv = table.idx[next_rows], table.val[next_rows]
    q = (w[actions[:, None], oi] * ov).sum(axis=1)
    boot = (target[:, ni] * nv).sum(axis=2).max(axis=0)
    y = np.where(terminal, rewards, rewards + cfg.gamma * boot)
    coef = (cfg.lr / len(q)) * (y - q)
    np.add.at(w, (actions[:, None], oi), coef[:, None] * ov)


def train_round(
    params: QParams,
    env: gw.EnvSpec,
    history: Sequence[CompressedERB],
    cfg: TrainConfig,
    round_index: int = 0,
) -> tuple[QParams, ReplayBuffer]:
    """Train on one environment while replaying experiences from earlier ones.

    After every environment step (once the round's buffer holds a full
    batch) one TD update is made on a batch mixing `history_per_batch` draws
    from the unpacked history with draws from the current buffer.
    """
    if params.feature_dim != env.obs_dim or params.num_actions != env.num_actions:
        raise DimensionError("parameters do not match the environment")
    table = _FeatureTable()
    exps, weights = _history_entries(history, env.obs_dim, env.num_actions)
    # unpacked history occupies rows [0, n_pool); the round's own
    # transitions are appended after it
    store = _Transitions.from_experiences(table, exps, weights)
    n_pool = store.n
    n_hist = cfg.history_per_batch if n_pool else 0
    n_cur = cfg.batch_size - n_hist
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, round_index]))

    w = params.weights.copy()
    target = w.copy()
    erb = ReplayBuffer(env.obs_dim, env.num_actions, env.name)
    updates = 0
    for episode in range(cfg.episodes_per_round):
        eps = cfg.epsilon(episode)
        state = gw.reset(env, int(rng.integers(2**63)))
        obs = gw.observe(env, state)
        while not state.done:
            action = select_action(w, obs, eps, rng)
            state, reward, terminal = gw.step(env, state, action)
            nxt = gw.observe(env, state)
            erb.append(Experience(obs, action, reward, nxt, terminal))
            store.add(table.row(obs), action, reward, table.row(nxt), terminal)
            obs = nxt
            if store.n - n_pool < cfg.batch_size:
                continue
            i = n_pool + rng.integers(store.n - n_pool, size=n_cur)
            if n_hist:
                i = np.concatenate((i, rng.integers(n_pool, size=n_hist)))
            _sparse_td_step(w, target, table, store.obs[i], store.act[i], store.rew[i], store.nxt[i], store.term[i], cfg)
            updates += 1
            if updates % cfg.target_sync_every == 0:
                target = w.copy()
    return QParams(w), erb


def greedy_episode(params: QParams, env: gw.EnvSpec, start: gw.EnvState) -> gw.EnvState:
    """Follow the greedy policy from `start` until the episode ends."""
    w = params.weights
    state = start
    while not state.done:
        action = int(np.argmax(w @ gw.observe(env, state)))
        state, _, _ = gw.step(env, state, action)
    return state


def evaluation_starts(envs: Sequence[gw.EnvSpec], starts_per_env: int, eval_seed: int) -> list[list[gw.EnvState]]:
    out = []
    for i, env in enumerate(envs):
        rng = np.random.default_rng(np.random.SeedSequence([eval_seed, i]))
        out.append([gw.reset(env, int(rng.integers(2**63))) for _ in range(starts_per_env)])
    return out


def evaluate(params: QParams, envs: Sequence[gw.EnvSpec], starts_per_env: int = 20, eval_seed: int = 0) -> dict[str, float]:
    """Mean terminal distance to the landmark under the greedy policy, per environment."""
    if starts_per_env < 1:
        raise ValueError("starts_per_env must be >= 1")
    result = {}
    for env, starts in zip(envs, evaluation_starts(envs, starts_per_env, eval_seed)):
        finals = [gw.distance(env, greedy_episode(params, env, s).position) for s in starts]
        result[env.name] = float(np.mean(finals))
    return result


def _round_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, t]).generate_state(1, np.uint64)[0])


@dataclass
class LifelongResult:
    reports: list[RoundReport]
    params: QParams
    buffers: list[ReplayBuffer] = field(default_factory=list)
    history: list[CompressedERB] = field(default_factory=list)


RoundHook = Callable[[int, ReplayBuffer, "CompressedERB | None"], str]


def lifelong_run(
    envs: Sequence[gw.EnvSpec],
    cfg: TrainConfig,
    compression: CompressionSpec | None = None,
    starts_per_env: int = 20,
    eval_seed: int = 0,
    on_round: RoundHook | None = None,
) -> list[RoundReport]:
    return lifelong_train(envs, cfg, compression, starts_per_env, eval_seed, on_round).reports


def lifelong_train(
    envs: Sequence[gw.EnvSpec],
    cfg: TrainConfig,
    compression: CompressionSpec | None = None,
    starts_per_env: int = 20,
    eval_seed: int = 0,
    on_round: RoundHook | None = None,
) -> LifelongResult:
    """Train on `envs` in order, replaying (compressed) buffers of earlier rounds.

    Each finished round's buffer is compressed once, right after the round;
    with ``compression=None`` it is kept whole. ``replay_mix = 0`` disables
    replay altogether. After every round all environments are evaluated.
    `on_round(t, raw, compressed)` may persist the buffers and return a path
    recorded in the report.
    """
    if not envs:
        raise ValueError("need at least one environment")
    first = envs[0]
    for env in envs:
        if env.obs_dim != first.obs_dim or env.num_actions != first.num_actions:
            raise DimensionError("all environments must share feature and action dimensions")
    params = QParams.zeros(first.num_actions, first.obs_dim)
    replay = cfg.replay_mix > 0
    history: list[CompressedERB] = []
    result = LifelongResult([], params)
    for t, env in enumerate(envs, start=1):
        params, erb = train_round(params, env, history if replay else [], cfg, round_index=t)
        packed = None
        if replay:
            if compression is None:
                packed = CompressedERB.identity(erb)
            else:
                spec = CompressionSpec(
                    method=compression.method,
                    ratio=compression.ratio,
                    seed=_round_seed(compression.seed, t),
                    max_iter=compression.max_iter,
                )
                packed = compress(erb, spec)
            history.append(packed)
        path = on_round(t, erb, packed if compression is not None else None) if on_round else ""
        per_env = evaluate(params, envs, starts_per_env, eval_seed)
        result.reports.append(
            RoundReport(
                round_index=t,
                trained_env=env.name,
                per_env_mean_distance=per_env,
                overall_mean_distance=float(np.mean(list(per_env.values()))),
                erb_path=path or "",
            )
        )
        result.buffers.append(erb)
    result.params = params
    result.history = history
    return result

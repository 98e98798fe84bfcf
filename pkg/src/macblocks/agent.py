"""DQN agent that picks one block configuration for the whole network.

The action space is the ordered list of valid configurations; the state is
the one-hot encoding of the configuration currently running plus a sliding
window of recent normalized throughput values.
"""
from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import neural
from .domain import (
    ENCODING_DIM,
    MAX_RATE_MBPS,
    BlockConfig,
    RewardSpec,
    Scenario,
    SimStats,
    TrainingConfig,
    decode_config,
    default_csma_ca_config,
    encode_config,
)
from .logic import action_space_fingerprint, enumerate_valid
from .simcore import DEFAULT_TIMING, Simulator, TimingParams

CHECKPOINT_FORMAT = "macblocks-agent"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, dump: dict):
        super().__init__(f"{message}; offending transition: {json.dumps(dump)}")
        self.dump = dump


class CheckpointMismatchError(ValueError):
    """Checkpoint was trained on a different action space."""


def compute_reward(stats: SimStats, spec: RewardSpec = RewardSpec()) -> float:
    energy_per_bit_uj = stats.energy_joules * 1e6 / max(stats.delivered_bits, 1)
    return spec.w0 * stats.avg_throughput_mbps - spec.w1 * energy_per_bit_uj


def select_action(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; exploitation breaks ties towards the lowest index."""
    q = np.asarray(q_values)
    if q.size == 0:
        raise ValueError("q_values is empty")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def td_target(reward: float, gamma: float, max_next_q: float, terminal: bool) -> float:
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    return reward if terminal else reward + gamma * max_next_q


def normalize_throughput(mbps: float) -> float:
    return min(max(mbps / MAX_RATE_MBPS, 0.0), 1.0)


@dataclass(frozen=True, eq=False)
class AgentState:
    config_encoding: np.ndarray
    history: np.ndarray

    @classmethod
    def initial(cls, config: BlockConfig, history_len: int = 15) -> "AgentState":
        return cls(encode_config(config), np.zeros(history_len))

    def advance(self, config: BlockConfig, throughput_mbps: float) -> "AgentState":
        hist = np.roll(self.history, -1)
        hist[-1] = normalize_throughput(throughput_mbps)
        return AgentState(encode_config(config), hist)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.config_encoding, self.history])


@dataclass(frozen=True)
class Transition:
    state: object  # AgentState or a plain feature vector
    action: int
    reward: float
    next_state: object
    terminal: bool = False


def _vec(state) -> np.ndarray:
    return state.vector() if hasattr(state, "vector") else np.asarray(state, dtype=np.float64)


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    def add(self, transition: Transition):
        self._items.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


class DQNLearner:
    """Online and target networks, replay memory and the exploration RNG."""

    def __init__(self, layer_sizes: Sequence[int], cfg: TrainingConfig = TrainingConfig(),
                 seed: int = 0, zero_output: bool = True):
        self.cfg = cfg
        params = neural.init_params(layer_sizes, seed)
        # untried actions start at Q = 0 instead of a random value
        self.online = neural.zero_output_layer(params) if zero_output else params
        self.target = self.online
        self.replay = ReplayBuffer(cfg.replay_capacity)
        self.rng = np.random.default_rng(seed)
        self.updates = 0
        self.env_steps = 0

    def q_values(self, state) -> np.ndarray:
        return neural.forward(self.online, _vec(state))

    def act(self, state, epsilon: float) -> int:
        return select_action(self.q_values(state), epsilon, self.rng)

    def observe(self, transition: Transition) -> Optional[float]:
        """Store a transition and train on a replay batch once there are enough."""
        self.replay.add(transition)
        self.env_steps += 1
        if len(self.replay) < self.cfg.batch_size:
            return None
        batch = self.replay.sample(self.cfg.batch_size, self.rng)
        return train_step(self, batch, self.cfg)


def train_step(learner: DQNLearner, batch: Sequence[Transition], cfg: TrainingConfig) -> float:
    """One SGD step on the mean squared TD error of ``batch``.

    The regression target moves the current estimate a fraction
    ``q_learning_rate`` towards the TD target (1 means the TD target itself).
    """
    if not batch:
        raise ValueError("empty batch")
    states = np.stack([_vec(t.state) for t in batch])
    nexts = np.stack([_vec(t.next_state) for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    terminal = np.array([t.terminal for t in batch], dtype=bool)

    max_next = neural.forward_batch(learner.target, nexts).max(axis=1)
    td = np.where(terminal, rewards, rewards + cfg.gamma * max_next)
    if cfg.q_learning_rate != 1.0:
        current = neural.forward_batch(learner.online, states)[np.arange(len(batch)), actions]
        td = current + cfg.q_learning_rate * (td - current)

    bad = ~np.isfinite(td)
    if bad.any():
        _diverged(batch, int(np.argmax(bad)), "non-finite TD target")
    loss, grads = neural.batch_loss_and_gradients(learner.online, states, actions, td)
    if not np.isfinite(loss):
        _diverged(batch, 0, "non-finite loss")
    try:
        learner.online = neural.sgd_step(learner.online, grads, cfg.sgd_step_size)
    except neural.NonFiniteError as exc:
        _diverged(batch, 0, str(exc))
    learner.updates += 1
    if learner.updates % cfg.target_sync_interval == 0:
        learner.target = learner.online
    return loss


def _diverged(batch, i, reason):
    t = batch[i]
    dump = {
        "index_in_batch": i,
        "state": _vec(t.state).tolist(),
        "action": int(t.action),
        "reward": float(t.reward),
        "next_state": _vec(t.next_state).tolist(),
        "terminal": bool(t.terminal),
    }
    raise TrainingDivergedError(f"training aborted: {reason}", dump)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- environment ---------------------------------------------------------

def epoch_stats(before: SimStats, after: SimStats, dt: float) -> SimStats:
    """Statistics of the interval between two cumulative snapshots."""
    delta = {
        name: getattr(after, name) - getattr(before, name)
        for name in ("delivered_bits", "generated_bits", "collisions", "retransmissions",
                     "drops", "control_airtime_sec", "data_airtime_sec", "idle_sec",
                     "energy_joules", "frames_sent", "frame_errors")
    }
    return SimStats(duration_sec=dt, avg_throughput_mbps=delta["delivered_bits"] / dt / 1e6, **delta)


class MacEnv:
    """A network run in which the whole network switches configuration every epoch.

    One episode is one continuous simulation; :meth:`step` applies an
    action for ``epoch_sec`` of simulated time.
    """

    def __init__(self, scenario: Scenario, timing: TimingParams = DEFAULT_TIMING,
                 reward_spec: RewardSpec = RewardSpec(), epoch_sec: float = 0.5,
                 actions: Optional[Sequence[BlockConfig]] = None):
        self.scenario = scenario
        self.timing = timing
        self.reward_spec = reward_spec
        self.epoch_sec = epoch_sec
        self.actions = list(enumerate_valid() if actions is None else actions)
        self.sim = None

    def reset(self, seed: int, horizon_sec: float,
              initial_config: Optional[BlockConfig] = None) -> BlockConfig:
        config = initial_config or default_csma_ca_config()
        scenario = replace(self.scenario, seed=int(seed), duration_sec=float(horizon_sec))
        self.sim = Simulator(config, scenario, self.timing)
        self._last = self.sim.snapshot()
        self._last_t = 0.0
        return config

    def step(self, action: int):
        config = self.actions[action]
        sim = self.sim
        sim.set_config(config)
        end = min(self._last_t + self.epoch_sec, sim.duration)
        try:
            sim.run_until(end)
        except Exception as exc:
            raise RuntimeError(f"simulation failed at t={self._last_t:.3f}s with {config.label()}") from exc
        snap = sim.snapshot()
        stats = epoch_stats(self._last, snap, end - self._last_t)
        self._last, self._last_t = snap, end
        return config, stats, compute_reward(stats, self.reward_spec)

    @property
    def done(self) -> bool:
        return self.sim is None or self._last_t >= self.sim.duration - 1e-12


@dataclass
class EpisodeRecord:
    seed: int
    configs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    throughputs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    final_state: Optional[AgentState] = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "steps": [
                {"config": c.to_dict(), "reward": r, "throughput_mbps": tp}
                for c, r, tp in zip(self.configs, self.rewards, self.throughputs)
            ],
        }


def run_episode(env: MacEnv, learner: DQNLearner, cfg: TrainingConfig, seed: int,
                steps: Optional[int] = None, explore: bool = True, learn: bool = True,
                initial_config: Optional[BlockConfig] = None) -> EpisodeRecord:
    """Play one episode; with ``explore`` and ``learn`` off this is a greedy evaluation."""
    steps = cfg.steps_per_episode if steps is None else steps
    config = env.reset(seed, steps * env.epoch_sec, initial_config)
    state = AgentState.initial(config, cfg.history_len)
    record = EpisodeRecord(seed=seed)
    for _ in range(steps):
        eps = cfg.epsilon(learner.env_steps) if explore else 0.0
        action = learner.act(state, eps)
        config, stats, reward = env.step(action)
        next_state = state.advance(config, stats.avg_throughput_mbps)
        if learn:
            loss = learner.observe(Transition(state, action, reward / MAX_RATE_MBPS, next_state))
            if loss is not None:
                record.losses.append(loss)
        record.configs.append(config)
        record.actions.append(action)
        record.rewards.append(reward)
        record.throughputs.append(stats.avg_throughput_mbps)
        state = next_state
    record.final_state = state
    return record


# -- sklearn-style wrappers ---------------------------------------------

class ConfigEncoder(TransformerMixin, BaseEstimator):
    """Maps block configurations to their 29-dim one-hot rows and back."""

    def fit(self, X=None, y=None):
        self.n_features_out_ = ENCODING_DIM
        return self

    def transform(self, X):
        configs = list(X)
        if not configs:
            return np.zeros((0, ENCODING_DIM))
        return np.stack([encode_config(c) for c in configs])

    def inverse_transform(self, X):
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != ENCODING_DIM:
            raise ValueError(f"expected {ENCODING_DIM} columns, got {X.shape[1]}")
        return [decode_config(row) for row in X]


class BlockSelector(BaseEstimator):
    """Trains a DQN on one scenario and exposes the block set it settles on.

    ``fit`` takes a :class:`Scenario`; ``predict`` maps state vectors
    (config encoding followed by throughput history) to action indices
    into ``actions_``.
    """

    def __init__(self, training_config: Optional[TrainingConfig] = None,
                 reward_spec: Optional[RewardSpec] = None,
                 timing: Optional[TimingParams] = None, seed: int = 0):
        self.training_config = training_config
        self.reward_spec = reward_spec
        self.timing = timing
        self.seed = seed

    def _cfg(self) -> TrainingConfig:
        return self.training_config or TrainingConfig()

    def fit(self, X: Scenario, y=None):
        cfg = self._cfg()
        env = MacEnv(X, self.timing or DEFAULT_TIMING, self.reward_spec or RewardSpec(),
                     cfg.sim_epoch_sec)
        self.actions_ = env.actions
        self.fingerprint_ = action_space_fingerprint(self.actions_)
        sizes = [ENCODING_DIM + cfg.history_len, *cfg.hidden_sizes, len(self.actions_)]
        learner = DQNLearner(sizes, cfg, seed=derive_seed(self.seed, 0))
        self.episodes_ = []
        for ep in range(cfg.episodes):
            rec = run_episode(env, learner, cfg, derive_seed(X.seed, self.seed, ep + 1))
            self.episodes_.append(rec)
        self.learner_ = learner
        self.params_ = learner.online
        final = self.episodes_[-1].final_state if self.episodes_ else \
            AgentState.initial(default_csma_ca_config(), cfg.history_len)
        self.final_state_ = final
        self.best_action_ = int(np.argmax(neural.forward(self.params_, final.vector())))
        self.best_config_ = self.actions_[self.best_action_]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.params_.input_dim:
            raise ValueError(f"expected {self.params_.input_dim} features, got {X.shape[1]}")
        return np.argmax(neural.forward_batch(self.params_, X), axis=1)

    def predict_configs(self, X) -> list:
        return [self.actions_[i] for i in self.predict(X)]


# -- checkpoints ----------------------------------------------------------

@dataclass
class AgentCheckpoint:
    params: neural.NNParams
    training_config: TrainingConfig
    fingerprint: str
    actions: list
    best_config: Optional[BlockConfig] = None
    final_state: Optional[AgentState] = None

    def greedy_action(self, state) -> int:
        return int(np.argmax(neural.forward(self.params, _vec(state))))


def save_agent(path, params, training_config, actions, best_config=None, final_state=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": action_space_fingerprint(actions),
        "action_count": len(actions),
        "training_config": training_config.to_dict(),
        "best_config": best_config.to_dict() if best_config else None,
        "final_state": final_state.vector().tolist() if final_state is not None else None,
        "network": params.to_dict(),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    os.replace(tmp, path)


def load_agent(path, rules=None) -> AgentCheckpoint:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not an agent checkpoint of a supported version")
    actions = enumerate_valid(rules)
    expected = action_space_fingerprint(actions)
    if doc["fingerprint"] != expected:
        raise CheckpointMismatchError(
            f"{path}: action-space fingerprint {doc['fingerprint'][:12]} does not match "
            f"the current rules ({expected[:12]})"
        )
    params = neural.NNParams.from_dict(doc["network"])
    if params.output_dim != len(actions):
        raise CheckpointMismatchError(f"{path}: network has {params.output_dim} outputs, "
                                      f"action space has {len(actions)}")
    best = BlockConfig.from_dict(doc["best_config"]) if doc.get("best_config") else None
    final = None
    if doc.get("final_state") is not None:
        vec = np.asarray(doc["final_state"], dtype=np.float64)
        final = AgentState(vec[:ENCODING_DIM], vec[ENCODING_DIM:])
    return AgentCheckpoint(params, TrainingConfig.from_dict(doc["training_config"]),
                           doc["fingerprint"], actions, best, final)

"""Deterministic 5-state chain with a value-iteration oracle."""
import numpy as np

from macblocks.agent import DQNLearner, Transition
from macblocks.domain import TrainingConfig

N_STATES = 5
LEFT, RIGHT = 0, 1


def step(s, a):
    if a == LEFT:
        return 0, 0.2
    if s == N_STATES - 1:
        return s, 1.0
    return s + 1, 0.0


def one_hot(s):
    v = np.zeros(N_STATES)
    v[s] = 1.0
    return v


def value_iteration(gamma, tol=1e-12):
    q = np.zeros((N_STATES, 2))
    while True:
        new = np.empty_like(q)
        for s in range(N_STATES):
            for a in (LEFT, RIGHT):
                s2, r = step(s, a)
                new[s, a] = r + gamma * q[s2].max()
        if np.abs(new - q).max() < tol:
            return new
        q = new


def train_on_chain(seed, updates=5000, gamma=0.8, step_size=0.01, hidden=(32,)):
    cfg = TrainingConfig(gamma=gamma, sgd_step_size=step_size, target_sync_interval=100,
                         batch_size=32, replay_capacity=10_000, epsilon_decay_steps=0,
                         epsilon_end=1.0)
    learner = DQNLearner([N_STATES, *hidden, 2], cfg, seed=seed)
    rng = np.random.default_rng(seed)
    s = 0
    while learner.updates < updates:
        a = int(rng.integers(2))  # uniform exploration covers every pair
        s2, r = step(s, a)
        learner.observe(Transition(one_hot(s), a, r, one_hot(s2)))
        s = s2 if rng.random() > 0.1 else int(rng.integers(N_STATES))
    q = np.stack([learner.q_values(one_hot(s)) for s in range(N_STATES)])
    return learner, q

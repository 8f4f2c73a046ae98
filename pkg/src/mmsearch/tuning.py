"""Closed-loop knob tuning driven by measured query throughput.

The tuner walks a small set of engine knobs.  After each adjustment it
measures throughput, turns the two relative deltas (against the first
measurement and against the previous step) into a scalar reward, and
feeds the transition to an actor-critic learner: two tiny two-layer
perceptrons (hidden width 64, tanh inside, actor squashed to the unit
box) with target copies blended in softly, trained from a ring replay
buffer with decaying Gaussian exploration.

A deterministic simulated environment with a known optimum stands in
for a live engine, so the loop itself can be exercised and regression
tested without timing noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import QueryError, TrainingError


def _sign(x: float) -> float:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


def perf_delta(perf_a: float, perf_b: float) -> float:
    """Relative throughput change (perf_a - perf_b) / perf_b."""
    if perf_b <= 0:
        raise QueryError("reference throughput must be positive")
    return (perf_a - perf_b) / perf_b


def reward_base(dq0: float, dq_prev: float) -> float:
    """Quadratic gain on the overall delta, scaled by recent momentum."""
    s = _sign(dq0)
    return s * ((1.0 + abs(dq0)) ** 2 - 1.0) * abs(1.0 + s * dq_prev)


def reward_exp(dq0: float, dq_prev: float) -> float:
    """Exponential gain; the momentum factor is exponential as well."""
    s = _sign(dq0)
    return s * (math.exp(abs(dq0)) - 1.0) * abs(math.exp(s * dq_prev))


def reward_log(dq0: float, dq_prev: float, variant: bool = False) -> float:
    """As printed this coincides with reward_base; ``variant`` swaps the
    quadratic gain for log(1 + |dq0|) to give an actually logarithmic
    curve for comparison."""
    if not variant:
        return reward_base(dq0, dq_prev)
    s = _sign(dq0)
    return s * math.log1p(abs(dq0)) * abs(1.0 + s * dq_prev)


def reward_penalty(lam: float, dq0: float, dq_prev: float) -> float:
    """Pure punishment term: negative when the recent move fights the trend."""
    if lam < 0:
        raise QueryError("penalty factor must be non-negative")
    return -lam * max(0.0, -_sign(dq0) * dq_prev)


REWARDS: dict[str, Callable[[float, float], float]] = {
    "base": reward_base,
    "exp": reward_exp,
    "log": reward_log,
    "log-variant": lambda dq0, dq_prev: reward_log(dq0, dq_prev, variant=True),
}


# -- knobs -----------------------------------------------------------------------


@dataclass(frozen=True)
class Knob:
    name: str
    lo: float
    hi: float
    integer: bool = True
    default: float = 0.0

    def denormalize(self, x: float) -> float | int:
        x = min(1.0, max(0.0, float(x)))
        v = self.lo + x * (self.hi - self.lo)
        return int(round(v)) if self.integer else v

    def normalize(self, v: float) -> float:
        if self.hi == self.lo:
            return 0.0
        return (float(v) - self.lo) / (self.hi - self.lo)


@dataclass(frozen=True)
class KnobSchema:
    knobs: tuple[Knob, ...]

    def __len__(self) -> int:
        return len(self.knobs)

    def names(self) -> list[str]:
        return [k.name for k in self.knobs]

    def defaults_normalized(self) -> np.ndarray:
        return np.asarray([k.normalize(k.default) for k in self.knobs])

    def denormalize(self, x: np.ndarray) -> dict[str, float | int]:
        return {k.name: k.denormalize(v) for k, v in zip(self.knobs, x)}

    def effective(self, x: np.ndarray) -> np.ndarray:
        """Snap to knob granularity and map back to the unit box."""
        return np.asarray([k.normalize(k.denormalize(v))
                           for k, v in zip(self.knobs, x)])


def default_knob_schema() -> KnobSchema:
    """The stock tuning surface of a search engine deployment."""
    return KnobSchema((
        Knob("leaf_capacity", 16, 1024, default=128),
        Knob("probe_space_cap", 1, 6, default=6),
        Knob("knn_expand", 1, 8, default=1),
        Knob("sample_pairs", 500, 20000, default=2000),
        Knob("worker_batch", 1, 64, default=8),
    ))


# -- replay buffer ------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity ring of (state, action, reward, next_state) rows."""

    def __init__(self, capacity: int = 10_000):
        self.capacity = capacity
        self._rows: list[tuple] = []
        self._at = 0

    def __len__(self) -> int:
        return len(self._rows)

    def add(self, state, action, reward: float, next_state):
        row = (np.asarray(state, dtype=np.float64).copy(),
               np.asarray(action, dtype=np.float64).copy(),
               float(reward),
               np.asarray(next_state, dtype=np.float64).copy())
        if len(self._rows) < self.capacity:
            self._rows.append(row)
        else:
            self._rows[self._at] = row
        self._at = (self._at + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, len(self._rows), size=min(batch, len(self._rows)))
        s = np.stack([self._rows[i][0] for i in idx])
        a = np.stack([self._rows[i][1] for i in idx])
        r = np.asarray([self._rows[i][2] for i in idx])
        s2 = np.stack([self._rows[i][3] for i in idx])
        return s, a, r, s2


# -- actor-critic -----------------------------------------------------------------------


class _TwoLayer:
    """h = tanh(W1 x + b1); y = W2 h + b2.  Plain SGD, hand backprop."""

    def __init__(self, d_in: int, d_out: int, hidden: int, rng: np.random.Generator):
        lim1 = 1.0 / math.sqrt(d_in)
        lim2 = 1.0 / math.sqrt(hidden)
        self.W1 = rng.uniform(-lim1, lim1, (hidden, d_in))
        self.b1 = np.zeros(hidden)
        self.W2 = rng.uniform(-lim2, lim2, (d_out, hidden))
        self.b2 = np.zeros(d_out)

    def forward(self, x: np.ndarray):
        pre = x @ self.W1.T + self.b1
        h = np.tanh(pre)
        return h @ self.W2.T + self.b2, h

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def copy_from(self, other: "_TwoLayer", blend: float = 1.0):
        for dst, src in zip(self.params(), other.params()):
            dst *= (1.0 - blend)
            dst += blend * src


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class ActorCritic:
    """Deterministic-policy learner over the unit knob box."""

    def __init__(self, state_dim: int, action_dim: int, hidden: int = 64,
                 seed: int = 0, actor_lr: float = 1e-3, critic_lr: float = 1e-2,
                 gamma: float = 0.9, soft_tau: float = 0.005,
                 initial_action: np.ndarray | None = None):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.gamma = gamma
        self.soft_tau = soft_tau
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.actor = _TwoLayer(state_dim, action_dim, hidden, rng)
        self.critic = _TwoLayer(state_dim + action_dim, 1, hidden, rng)
        self.actor_target = _TwoLayer(state_dim, action_dim, hidden, rng)
        self.critic_target = _TwoLayer(state_dim + action_dim, 1, hidden, rng)
        # value head starts at zero: Q estimates (and hence policy gradients) are
        # reward-driven from the first update instead of random-init noise
        self.critic.W2[:] = 0.0
        self.critic.b2[:] = 0.0
        if initial_action is not None:
            # pin the starting policy to the given action (e.g. current knob
            # settings) so a noise-free tuner does not jump away from them
            p = np.clip(np.asarray(initial_action, dtype=np.float64), 1e-6, 1.0 - 1e-6)
            self.actor.W2[:] = 0.0
            self.actor.b2[:] = np.log(p) - np.log1p(-p)
        self.actor_target.copy_from(self.actor)
        self.critic_target.copy_from(self.critic)

    # forward passes ------------------------------------------------------------

    def act(self, state: np.ndarray) -> np.ndarray:
        out, _ = self.actor.forward(state[None, :])
        return _sigmoid(out[0])

    def _policy(self, net: _TwoLayer, states: np.ndarray) -> np.ndarray:
        out, _ = net.forward(states)
        return _sigmoid(out)

    def q_value(self, net: _TwoLayer, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        out, _ = net.forward(np.concatenate([states, actions], axis=1))
        return out[:, 0]

    # updates --------------------------------------------------------------------

    def critic_update(self, s, a, r, s2) -> float:
        """One SGD step on mean squared TD error; returns the pre-step loss."""
        a2 = self._policy(self.actor_target, s2)
        y = r + self.gamma * self.q_value(self.critic_target, s2, a2)
        x = np.concatenate([s, a], axis=1)
        out, h = self.critic.forward(x)
        q = out[:, 0]
        err = q - y
        loss = float(np.mean(err ** 2))
        B = len(q)
        g_q = (2.0 * err / B)[:, None]                      # (B,1)
        gW2 = g_q.T @ h                                     # (1,H)
        gb2 = g_q.sum(axis=0)
        g_h = g_q @ self.critic.W2                          # (B,H)
        g_pre = g_h * (1.0 - h * h)
        gW1 = g_pre.T @ x
        gb1 = g_pre.sum(axis=0)
        self.critic.W2 -= self.critic_lr * gW2
        self.critic.b2 -= self.critic_lr * gb2
        self.critic.W1 -= self.critic_lr * gW1
        self.critic.b1 -= self.critic_lr * gb1
        return loss

    def actor_update(self, s) -> float:
        """Ascend the critic's value of the actor's own actions."""
        pre1 = s @ self.actor.W1.T + self.actor.b1
        h = np.tanh(pre1)
        pre2 = h @ self.actor.W2.T + self.actor.b2
        a = _sigmoid(pre2)
        x = np.concatenate([s, a], axis=1)
        out, hc = self.critic.forward(x)
        B = len(s)
        # dJ/da through the critic at (s, a)
        g_q = np.full((B, 1), 1.0 / B)
        g_hc = g_q @ self.critic.W2
        g_pre_c = g_hc * (1.0 - hc * hc)
        g_x = g_pre_c @ self.critic.W1
        g_a = g_x[:, self.state_dim:]
        # through the actor
        g_pre2 = g_a * a * (1.0 - a)
        gW2 = g_pre2.T @ h
        gb2 = g_pre2.sum(axis=0)
        g_h = g_pre2 @ self.actor.W2
        g_pre1 = g_h * (1.0 - h * h)
        gW1 = g_pre1.T @ s
        gb1 = g_pre1.sum(axis=0)
        self.actor.W2 += self.actor_lr * gW2
        self.actor.b2 += self.actor_lr * gb2
        self.actor.W1 += self.actor_lr * gW1
        self.actor.b1 += self.actor_lr * gb1
        return float(np.mean(out[:, 0]))

    def soft_update(self):
        self.actor_target.copy_from(self.actor, blend=self.soft_tau)
        self.critic_target.copy_from(self.critic, blend=self.soft_tau)


# -- environments ---------------------------------------------------------------------


class SimulatedEnvironment:
    """Deterministic throughput model: a smooth bowl with a known optimum.

    perf(x) = base * exp(-sharpness * mean((x_eff - optimum)^2)) where
    x_eff snaps to real knob granularity first.  Entirely noise-free, so
    tuning runs are exactly reproducible.
    """

    def __init__(self, schema: KnobSchema, optimum: Sequence[float] | None = None,
                 base: float = 100.0, sharpness: float = 3.0):
        self.schema = schema
        if optimum is None:
            optimum = (0.8, 0.3, 0.65, 0.7, 0.4)[: len(schema)]
        self.optimum = np.asarray(optimum, dtype=np.float64)
        if len(self.optimum) != len(schema):
            raise QueryError("optimum size must match the knob schema")
        self.base = base
        self.sharpness = sharpness

    def measure(self, x: np.ndarray) -> float:
        eff = self.schema.effective(np.asarray(x, dtype=np.float64))
        gap = float(np.mean((eff - self.optimum) ** 2))
        return self.base * math.exp(-self.sharpness * gap)


class EngineEnvironment:
    """Measures a live engine on a fixed query batch under given knobs.

    Build-time knobs (leaf capacity, sampling budget) trigger a rebuild;
    query-time knobs only reconfigure.  A failed measurement is retried
    once, then aborts the tuning run.
    """

    def __init__(self, dataset, queries, schema: KnobSchema | None = None):
        from .engine import EngineConfig, SearchEngine  # local import, avoids cycle
        self._EngineConfig = EngineConfig
        self._SearchEngine = SearchEngine
        self.dataset = dataset
        self.queries = queries
        self.schema = schema or default_knob_schema()
        self._engine = None
        self._built_with: tuple | None = None

    def measure(self, x: np.ndarray) -> float:
        knobs = self.schema.denormalize(np.asarray(x, dtype=np.float64))
        last_exc = None
        for _ in range(2):
            try:
                return self._measure_once(knobs)
            except Exception as exc:  # noqa: BLE001  - retry once, then surface
                last_exc = exc
        raise TrainingError(f"throughput measurement failed twice: {last_exc}")

    def _measure_once(self, knobs: dict) -> float:
        build_key = (knobs.get("leaf_capacity", 128), knobs.get("sample_pairs", 2000))
        if self._engine is None or build_key != self._built_with:
            cfg = self._EngineConfig(leaf_capacity=int(build_key[0]),
                                     sample_pairs=int(build_key[1]))
            self._engine = self._SearchEngine(self.dataset, cfg)
            self._built_with = build_key
        if "probe_space_cap" in knobs:
            self._engine.config.probe_space_cap = int(knobs["probe_space_cap"])
        if "knn_expand" in knobs:
            self._engine.config.knn_expand = int(knobs["knn_expand"])
        return self._engine.run_batch(self.queries)


# -- the tuning loop ----------------------------------------------------------------------


@dataclass
class TuneStep:
    step: int
    knobs: dict
    perf: float
    reward: float
    dq0: float
    dq_prev: float


@dataclass
class TuneResult:
    baseline_perf: float
    best_perf: float
    best_knobs: dict
    improvement: float
    trace: list[TuneStep] = field(default_factory=list)


def tune(env, steps: int = 50, seed: int = 0, reward: str = "base",
         schema: KnobSchema | None = None, sigma: float = 0.1,
         sigma_decay: float = 0.99, batch: int = 32,
         replay_capacity: int = 10_000, penalty_lambda: float | None = None) -> TuneResult:
    """Run the actor-critic loop for ``steps`` adjustments.

    ``reward`` picks the shaping function; ``penalty_lambda`` adds the
    punishment term on top when set.  The best knobs seen (by measured
    throughput) are returned, not the last ones.
    """
    if reward not in REWARDS:
        raise QueryError(f"unknown reward kind {reward!r} (use one of {sorted(REWARDS)})")
    if steps < 1:
        raise QueryError("steps must be at least 1")
    schema = schema or getattr(env, "schema", None) or default_knob_schema()
    reward_fn = REWARDS[reward]
    rng = np.random.Generator(np.random.PCG64(seed))
    K = len(schema)
    x0 = schema.defaults_normalized()
    learner = ActorCritic(state_dim=K + 2, action_dim=K, seed=seed, initial_action=x0)
    buffer = ReplayBuffer(replay_capacity)

    perf0 = env.measure(x0)
    # best tracks measured steps only; the untouched baseline is reported separately
    best_perf, best_x = -math.inf, x0.copy()
    trace: list[TuneStep] = []
    state = np.concatenate([x0, [0.0, 0.0]])
    prev_perf = perf0
    for step in range(1, steps + 1):
        action = np.clip(learner.act(state) + rng.normal(0.0, sigma, K), 0.0, 1.0)
        perf = env.measure(action)
        dq0 = perf_delta(perf, perf0)
        dq_prev = perf_delta(perf, prev_perf)
        r = reward_fn(dq0, dq_prev)
        if penalty_lambda is not None:
            r += reward_penalty(penalty_lambda, dq0, dq_prev)
        nxt = np.concatenate([action, [dq0, dq_prev]])
        buffer.add(state, action, r, nxt)
        s, a, rew, s2 = buffer.sample(batch, rng)
        learner.critic_update(s, a, rew, s2)
        learner.actor_update(s)
        learner.soft_update()
        trace.append(TuneStep(step=step, knobs=schema.denormalize(action),
                              perf=perf, reward=r, dq0=dq0, dq_prev=dq_prev))
        if perf > best_perf:
            best_perf, best_x = perf, action.copy()
        prev_perf = perf
        sigma *= sigma_decay
    return TuneResult(baseline_perf=perf0, best_perf=best_perf,
                      best_knobs=schema.denormalize(best_x),
                      improvement=perf_delta(best_perf, perf0), trace=trace)

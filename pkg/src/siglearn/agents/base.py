"""Controller base classes and the shared deep-Q training machinery.

Controllers follow the scikit-learn estimator protocol: constructor
arguments are hyperparameters stored verbatim (so ``get_params`` /
``set_params`` / ``clone`` work), learned state lives in underscored
attributes created by ``setup`` / ``fit``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .. import microsim
from ..autodiff import AdamState, ArrayOps, Tape, TapeOps, adam_step, backward
from ..roadnet import RoadNetwork, observation_layout
from ..validation import check_probability


@dataclass
class Experience:
    """One decision step for every intersection at once."""

    obs: np.ndarray        # (N, k)
    actions: np.ndarray    # (N,)
    rewards: np.ndarray    # (N,)
    next_obs: np.ndarray   # (N, k)


class ReplayBuffer:
    """Seeded uniform-sampling ring buffer."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._next = 0
        self.rng = np.random.default_rng(seed)

    def add(self, item: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, batch_size: int) -> list[Experience]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def epsilon_greedy(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Pick a phase: explore uniformly with probability ``eps``, otherwise
    the argmax (ties resolve to the smallest phase id)."""
    check_probability(eps, "eps")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(0, q.shape[-1]))
    return int(np.argmax(q))


@dataclass
class EpisodeStats:
    travel_time: float
    losses: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else float("nan")


class SignalController(BaseEstimator):
    """Common surface: ``setup`` binds a network, ``decide`` maps the
    current simulator state to one phase per intersection."""

    trainable = False

    def setup(self, net: RoadNetwork, dt: int = 10) -> "SignalController":
        self.net_ = net
        self.dt_ = dt
        self.layout_ = observation_layout(net)
        self.n_ = len(net.intersections)
        self.p_ = self.layout_.n_phases
        return self

    def decide(self, sim: microsim.SimState) -> np.ndarray:
        raise NotImplementedError

    def run_episode(self, sim: microsim.SimState, episode_s: int = 3600,
                    eps: float = 0.0, learn: bool = False,
                    attention_sink: Optional[list] = None) -> EpisodeStats:
        """Roll one fixed-length episode; static controllers never learn."""
        steps = episode_s // self.dt_
        for _ in range(steps):
            sim.step(self.decide(sim), self.dt_)
        return EpisodeStats(travel_time=sim.average_travel_time(), steps=steps)

    def fit(self, scenario, episodes: int = 100):
        """Static controllers have nothing to learn; binds the network."""
        self.setup(scenario.build_network(), scenario.dt)
        return self


class ReplayQAgent(SignalController):
    """Shared-parameter deep-Q controller skeleton.

    Subclasses provide parameter initialization and the two forward paths
    (plain for acting / targets, taped for gradients); everything else --
    epsilon-greedy rollouts, replay, target sync, Adam -- lives here.

    Hyperparameters every subclass accepts: ``gamma`` (discount), ``lr``,
    ``replay_capacity``, ``batch_size``, ``updates_per_episode``,
    ``target_sync_episodes``, epsilon schedule (``eps_start`` -> ``eps_end``
    linearly over ``eps_anneal_episodes``), and ``seed``.
    """

    trainable = True

    # subclass hooks -----------------------------------------------------

    def _init_params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _forward(self, params: dict, ops, x):
        """Q-values for a prepared model input, under either backend."""
        raise NotImplementedError

    def _model_input(self, obs: np.ndarray) -> np.ndarray:
        """Transform raw observations into the network input."""
        return obs

    def _q_values_recording(self, obs: np.ndarray):
        """One acting step returning (q, attention records); subclasses
        without attention return an empty record list."""
        return self._q_values(self.params_, obs), []

    # generic deep-Q pieces ----------------------------------------------

    def _q_values(self, params: dict, obs: np.ndarray) -> np.ndarray:
        return np.asarray(self._forward(params, ArrayOps, self._model_input(obs)))

    def _td_target(self, rewards: np.ndarray, next_obs: np.ndarray) -> np.ndarray:
        """Bootstrapped targets under the frozen target parameters."""
        next_q = self._q_values(self.target_params_, next_obs)
        return rewards + self.gamma * next_q.max(axis=-1)

    @staticmethod
    def _one_hot(actions: np.ndarray, n_phases: int) -> np.ndarray:
        onehot = np.zeros(actions.shape + (n_phases,), dtype=np.float64)
        np.put_along_axis(onehot, actions[..., None], 1.0, axis=-1)
        return onehot

    def _loss_pipeline(self, params: dict, ops, obs, actions, target):
        """Mean over sampled steps, sum over intersections, of squared
        TD errors; works under both backends."""
        q = self._forward(params, ops, self._model_input(obs))
        picked = ops.reduce_sum(ops.mul(q, self._one_hot(actions, self.p_)), axis=-1)
        diff = ops.sub(target, picked)
        return ops.reduce_mean(ops.reduce_sum(ops.square(diff), axis=-1))

    def _loss_value(self, params: dict, obs, actions, rewards, next_obs) -> float:
        """Plain evaluation of the training loss (e.g. for difference
        quotients); the bootstrap target stays fixed."""
        target = self._td_target(rewards, next_obs)
        return float(self._loss_pipeline(params, ArrayOps, obs, actions, target))

    def _loss_and_grads(self, obs, actions, rewards, next_obs):
        if obs.shape[0] == 0:
            raise ValueError("empty batch")
        target = self._td_target(rewards, next_obs)
        tape = Tape()
        nodes = {k: tape.leaf(v, name=k) for k, v in self.params_.items()}
        loss = self._loss_pipeline(nodes, TapeOps(tape), obs, actions, target)
        backward(loss)
        grads = {k: n.grad for k, n in nodes.items() if n.grad is not None}
        return float(loss.value), grads

    # lifecycle ----------------------------------------------------------

    def setup(self, net: RoadNetwork, dt: int = 10) -> "ReplayQAgent":
        super().setup(net, dt)
        self.rng_ = np.random.default_rng(self.seed)
        self.params_ = self._init_params()
        self.target_params_ = {k: v.copy() for k, v in self.params_.items()}
        self.replay_ = ReplayBuffer(self.replay_capacity, seed=self.seed + 1)
        self.adam_ = AdamState(lr=self.lr)
        self.episodes_done_ = 0
        return self

    def sync_target(self) -> None:
        self.target_params_ = {k: v.copy() for k, v in self.params_.items()}

    def epsilon_at(self, episode: int) -> float:
        if self.eps_anneal_episodes <= 0:
            return self.eps_end
        frac = min(1.0, episode / self.eps_anneal_episodes)
        return self.eps_start + (self.eps_end - self.eps_start) * frac

    def predict(self, obs: np.ndarray) -> np.ndarray:
        """Greedy phases for an (N, k) observation matrix."""
        q = self._q_values(self.params_, np.asarray(obs, dtype=np.float64))
        return np.argmax(q, axis=-1)

    def act(self, q: np.ndarray, eps: float) -> np.ndarray:
        return np.array([epsilon_greedy(q[i], eps, self.rng_)
                         for i in range(q.shape[0])], dtype=np.intp)

    def decide(self, sim: microsim.SimState) -> np.ndarray:
        return self.predict(sim.observe_all())

    # training -----------------------------------------------------------

    def run_episode(self, sim: microsim.SimState, episode_s: int = 3600,
                    eps: float = 0.0, learn: bool = False,
                    attention_sink: Optional[list] = None) -> EpisodeStats:
        steps = episode_s // self.dt_
        obs = sim.observe_all()
        for _ in range(steps):
            if attention_sink is not None:
                q, records = self._q_values_recording(obs)
                for record in records:
                    record.time = sim.clock
                attention_sink.extend(records)
            else:
                q = self._q_values(self.params_, obs)
            actions = self.act(q, eps)
            rewards = sim.step(actions, self.dt_)
            next_obs = sim.observe_all()
            if learn:
                self.replay_.add(Experience(obs, actions, rewards, next_obs))
            obs = next_obs
        stats = EpisodeStats(travel_time=sim.average_travel_time(), steps=steps)
        if learn:
            stats.losses = self._update()
            self.episodes_done_ += 1
            if self.episodes_done_ % self.target_sync_episodes == 0:
                self.sync_target()
        return stats

    def _update(self) -> list[float]:
        if len(self.replay_) == 0:
            return []
        losses = []
        for _ in range(self.updates_per_episode):
            batch = self.replay_.sample(self.batch_size)
            obs = np.stack([e.obs for e in batch])
            actions = np.stack([e.actions for e in batch])
            rewards = np.stack([e.rewards for e in batch])
            next_obs = np.stack([e.next_obs for e in batch])
            loss, grads = self._loss_and_grads(obs, actions, rewards, next_obs)
            adam_step(self.params_, grads, self.adam_)
            losses.append(loss)
        return losses

    def train_episode(self, net: RoadNetwork, flow: microsim.FlowSpec,
                      episode_s: int = 3600, eps: Optional[float] = None,
                      sim_seed: int = 0) -> EpisodeStats:
        """One seeded training episode on a fresh simulation."""
        sim = microsim.reset(net, flow, sim_seed)
        if eps is None:
            eps = self.epsilon_at(self.episodes_done_)
        return self.run_episode(sim, episode_s, eps=eps, learn=True)

    def fit(self, scenario, episodes: int = 100):
        """Train on a scenario's fixed flow for a number of episodes."""
        self.setup(scenario.build_network(), scenario.dt)
        for _ in range(episodes):
            sim = microsim.reset(self.net_, scenario.flow, seed=self.seed)
            self.run_episode(sim, scenario.episode_s,
                             eps=self.epsilon_at(self.episodes_done_), learn=True)
        return self

"""Learned baselines without attention.

Both reuse the deep-Q machinery with a plain feed-forward stack whose
hidden blocks mirror the attention net's value path (value projection,
output projection, bias, ReLU), so capacity per layer matches and a
frozen-uniform attention net over a self-only scope computes the same
function.
"""

from __future__ import annotations

import numpy as np

from .base import ReplayQAgent


def init_mlp_params(k_in: int, p: int, rng: np.random.Generator, m: int = 32,
                    c: int = 32, layers: int = 2) -> dict[str, np.ndarray]:
    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params = {"embed.W": glorot(k_in, m), "embed.b": np.zeros(m)}
    for l in range(layers):
        params[f"layer{l}.Wc"] = glorot(m, c)
        params[f"layer{l}.Wq"] = glorot(c, m)
        params[f"layer{l}.bq"] = np.zeros(m)
    params["out.W"] = glorot(m, p)
    params["out.b"] = np.zeros(p)
    return params


def mlp_forward(params, ops, x, layers: int = 2):
    h = ops.dense(x, params["embed.W"], params["embed.b"], activation="relu")
    for l in range(layers):
        inner = ops.matmul(ops.matmul(h, params[f"layer{l}.Wc"]),
                           params[f"layer{l}.Wq"])
        h = ops.relu(ops.add(inner, params[f"layer{l}.bq"]))
    return ops.add(ops.matmul(h, params["out.W"]), params["out.b"])


class LocalObsAgent(ReplayQAgent):
    """Shared-parameter DQN on each intersection's own observation only."""

    def __init__(self, m: int = 32, c: int = 32, layers: int = 2,
                 gamma: float = 0.8, lr: float = 1e-3,
                 replay_capacity: int = 10000, batch_size: int = 32,
                 updates_per_episode: int = 30, target_sync_episodes: int = 1,
                 eps_start: float = 0.8, eps_end: float = 0.05,
                 eps_anneal_episodes: int = 50, seed: int = 0):
        self.m = m
        self.c = c
        self.layers = layers
        self.gamma = gamma
        self.lr = lr
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.updates_per_episode = updates_per_episode
        self.target_sync_episodes = target_sync_episodes
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_anneal_episodes = eps_anneal_episodes
        self.seed = seed

    def _input_dim(self) -> int:
        return self.layout_.k

    def _init_params(self):
        return init_mlp_params(self._input_dim(), self.p_, self.rng_,
                               m=self.m, c=self.c, layers=self.layers)

    def _forward(self, params, ops, x):
        return mlp_forward(params, ops, x, layers=self.layers)


class ConcatObsAgent(LocalObsAgent):
    """Shared-parameter DQN whose input concatenates the target's
    observation with its four adjacent intersections' observations at
    fixed slots (N, E, S, W order; boundary sides zero-padded).

    The fixed indexing means the function is *not* invariant to swapping
    two neighbor slots, unlike the attention agent.
    """

    def setup(self, net, dt: int = 10) -> "ConcatObsAgent":
        # index len(net.intersections) points at an all-zero padding row
        missing = len(net.intersections)
        rows = []
        for inter in net.intersections:
            sides = net.neighbor_by_direction(inter.id)
            rows.append([sides[d] if sides[d] is not None else missing
                         for d in ("N", "E", "S", "W")])
        self.neighbor_index_ = np.asarray(rows, dtype=np.intp)
        super().setup(net, dt)
        return self

    def _input_dim(self) -> int:
        return 5 * self.layout_.k

    def _model_input(self, obs: np.ndarray) -> np.ndarray:
        return concat_neighbor_observations(obs, self.neighbor_index_)


def concat_neighbor_observations(obs: np.ndarray, neighbor_index: np.ndarray) -> np.ndarray:
    """[own | N | E | S | W] feature rows; index len(obs row axis) pads zero."""
    obs = np.asarray(obs, dtype=np.float64)
    pad_shape = list(obs.shape)
    pad_shape[-2] = 1
    padded = np.concatenate([obs, np.zeros(pad_shape)], axis=-2)
    if obs.ndim == 2:
        stacked = padded[neighbor_index, :]           # (N, 4, k)
        flat = stacked.reshape(obs.shape[0], -1)
    else:
        stacked = padded[:, neighbor_index, :]        # (B, N, 4, k)
        flat = stacked.reshape(obs.shape[0], obs.shape[1], -1)
    return np.concatenate([obs, flat], axis=-1)

"""Graph-attention Q-network over neighboring intersections.

One parameter set is shared by every intersection.  Each observation is
embedded, then stacked attention layers let every intersection weigh its
neighborhood: per head, a target projection of the receiver is dotted
against a source projection of each neighbor, the scores pass through a
temperature softmax over the neighborhood slots, and the neighbors'
value projections are summed under those weights.  Head outputs are
averaged, projected, and ReLU-activated; the final layer output feeds a
linear per-phase q-value head.

Because neighbors enter only through the attention-weighted sum, the
result is independent of the order neighbor slots are stored in, and the
receptive field of an intersection grows by one scope hop per layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ArrayOps
from ..roadnet import ScopeTable, build_scope_table
from .base import ReplayQAgent


@dataclass
class AttentionRecord:
    """Attention weights of one target intersection for one (step, layer,
    head); only real (unpadded) neighbor slots are kept."""

    time: int
    layer: int
    head: int
    target: int
    neighbor_ids: tuple
    alphas: tuple

    def total(self) -> float:
        return float(sum(self.alphas))


def param_count(k: int, p: int, m: int = 32, n: int = 32, c: int = 32,
                layers: int = 2, heads: int = 5) -> int:
    """Exact learnable-scalar count of a parameter set.

    Embedding k*m + m; per attention layer: heads * (two m*n score
    projections + one m*c value projection) plus the c*m output
    projection and its m bias; q head m*p + p.
    """
    embed = k * m + m
    per_layer = heads * (2 * m * n + m * c) + c * m + m
    head = m * p + p
    return embed + layers * per_layer + head


def init_attention_params(k: int, p: int, rng: np.random.Generator,
                          m: int = 32, n: int = 32, c: int = 32,
                          layers: int = 2, heads: int = 5) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, deterministic in ``rng``."""

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    params = {"embed.W": glorot(k, m), "embed.b": np.zeros(m)}
    for l in range(layers):
        for h in range(heads):
            params[f"layer{l}.head{h}.Wt"] = glorot(m, n)
            params[f"layer{l}.head{h}.Ws"] = glorot(m, n)
            params[f"layer{l}.head{h}.Wc"] = glorot(m, c)
        params[f"layer{l}.Wq"] = glorot(c, m)
        params[f"layer{l}.bq"] = np.zeros(m)
    params["out.W"] = glorot(m, p)
    params["out.b"] = np.zeros(p)
    return params


def uniform_weights(scope: ScopeTable) -> np.ndarray:
    """Attention frozen to 1/|real slots| over each target's valid slots."""
    w = scope.valid.astype(np.float64)
    return w / w.sum(axis=-1, keepdims=True)


def attention_forward(params, ops, obs, scope: ScopeTable, *, tau: float = 1.0,
                      layers: int = 2, heads: int = 5,
                      uniform_attention: bool = False, record: bool = False):
    """Full forward pass for (N, k) or (B, N, k) observations.

    Returns (q, records) where q has a trailing phase axis and records is
    a list of (layer, head, alpha ndarray) when ``record`` is set.
    """
    h = ops.dense(obs, params["embed.W"], params["embed.b"], activation="relu")
    records = []
    frozen = uniform_weights(scope)[..., None] if uniform_attention else None
    for l in range(layers):
        acc = None
        for hd in range(heads):
            hc = ops.matmul(h, params[f"layer{l}.head{hd}.Wc"])
            hc_nb = ops.take_neighbors(hc, scope.ids)            # (...,N,S,c)
            if uniform_attention:
                weighted = ops.mul(hc_nb, frozen)
                if record:
                    records.append((l, hd, frozen[..., 0]))
            else:
                ht = ops.matmul(h, params[f"layer{l}.head{hd}.Wt"])
                hs = ops.matmul(h, params[f"layer{l}.head{hd}.Ws"])
                hs_nb = ops.take_neighbors(hs, scope.ids)        # (...,N,S,n)
                scores = ops.reduce_sum(
                    ops.mul(ops.expand_dims(ht, -2), hs_nb), axis=-1)
                alpha = ops.softmax_temp(scores, tau=tau, valid=scope.valid)
                weighted = ops.mul(ops.expand_dims(alpha, -1), hc_nb)
                if record:
                    records.append((l, hd, np.asarray(ops.value(alpha))))
            head_sum = ops.reduce_sum(weighted, axis=-2)         # (...,N,c)
            acc = head_sum if acc is None else ops.add(acc, head_sum)
        pooled = ops.mul(acc, 1.0 / heads)
        h = ops.relu(ops.add(ops.matmul(pooled, params[f"layer{l}.Wq"]),
                             params[f"layer{l}.bq"]))
    q = ops.add(ops.matmul(h, params["out.W"]), params["out.b"])
    return q, records


# small functional pieces, used directly by unit tests -------------------


def embed(obs: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ReLU-activated linear embedding of a raw observation."""
    return np.maximum(np.asarray(obs) @ w + b, 0.0)


def interaction_scores(h_target: np.ndarray, neighbor_hs: np.ndarray,
                       w_target: np.ndarray, w_source: np.ndarray) -> np.ndarray:
    """Raw score of each neighbor for one receiver: the receiver's target
    projection dotted with the neighbor's source projection.  Generally
    asymmetric: swapping roles swaps the projections."""
    return (np.asarray(neighbor_hs) @ w_source) @ (np.asarray(h_target) @ w_target)


def attention_weights(scores: np.ndarray, tau: float = 1.0,
                      valid=None) -> np.ndarray:
    return ArrayOps.softmax_temp(np.asarray(scores, dtype=np.float64), tau, valid)


def aggregate(alphas: np.ndarray, neighbor_hs: np.ndarray, w_values: list,
              w_out: np.ndarray, b_out: np.ndarray) -> np.ndarray:
    """Head-averaged weighted neighbor sum, projected and activated.

    ``alphas`` is (H, S), ``neighbor_hs`` (S, m), ``w_values`` one m x c
    matrix per head.
    """
    heads = alphas.shape[0]
    acc = None
    for h in range(heads):
        term = (alphas[h][:, None] * (neighbor_hs @ w_values[h])).sum(axis=0)
        acc = term if acc is None else acc + term
    return np.maximum((acc / heads) @ w_out + b_out, 0.0)


class GraphAttentionAgent(ReplayQAgent):
    """Deep-Q controller with stacked multi-head neighborhood attention.

    All intersections share one parameter set; scopes hold each
    intersection's ``scope_size`` nearest neighbors (self included) under
    ``scope_metric`` ("geo" straight-line distance or "node" hop count).
    """

    uniform_attention = False

    def __init__(self, m: int = 32, n: int = 32, c: int = 32, layers: int = 2,
                 heads: int = 5, scope_size: int = 5, scope_metric: str = "geo",
                 tau: float = 1.0, gamma: float = 0.8, lr: float = 1e-3,
                 replay_capacity: int = 10000, batch_size: int = 32,
                 updates_per_episode: int = 30, target_sync_episodes: int = 1,
                 eps_start: float = 0.8, eps_end: float = 0.05,
                 eps_anneal_episodes: int = 50, seed: int = 0):
        self.m = m
        self.n = n
        self.c = c
        self.layers = layers
        self.heads = heads
        self.scope_size = scope_size
        self.scope_metric = scope_metric
        self.tau = tau
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

    def setup(self, net, dt: int = 10) -> "GraphAttentionAgent":
        super().setup(net, dt)
        self.scope_ = build_scope_table(net, self.scope_size, self.scope_metric)
        return self

    def _init_params(self) -> dict[str, np.ndarray]:
        return init_attention_params(
            self.layout_.k, self.p_, self.rng_, m=self.m, n=self.n, c=self.c,
            layers=self.layers, heads=self.heads)

    def _forward(self, params, ops, x):
        return attention_forward(
            params, ops, x, self.scope_, tau=self.tau, layers=self.layers,
            heads=self.heads, uniform_attention=self.uniform_attention)[0]

    def _q_values_recording(self, obs):
        q, raw = attention_forward(
            self.params_, ArrayOps, obs, self.scope_, tau=self.tau,
            layers=self.layers, heads=self.heads,
            uniform_attention=self.uniform_attention, record=True)
        records = []
        for layer, head, alpha in raw:
            for i in range(alpha.shape[0]):
                keep = self.scope_.valid[i]
                records.append(AttentionRecord(
                    time=-1, layer=layer, head=head, target=i,
                    neighbor_ids=tuple(int(j) for j in self.scope_.ids[i][keep]),
                    alphas=tuple(float(a) for a in alpha[i][keep])))
        return q, records

    def param_total(self) -> int:
        return param_count(self.layout_.k, self.p_, m=self.m, n=self.n,
                           c=self.c, layers=self.layers, heads=self.heads)


class UniformAttentionAgent(GraphAttentionAgent):
    """Ablation twin: attention frozen to uniform weights over each
    neighborhood, so only the value/projection path is learned."""

    uniform_attention = True

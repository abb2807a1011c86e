"""Learned control variate c_phi over relaxed predictions and the reference.

Each position feeds ``[z_t ; onehot(ref_t)]`` through two Linear+ReLU layers
and a Linear+sigmoid head; the sigmoid outputs are averaged over the real
positions of the prediction (padding is masked out of the mean).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from relaxsum.params import ParamStore


@dataclass
class CVCache:
    X: np.ndarray
    weights: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    s: np.ndarray
    snapshot: np.ndarray


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ControlVariate:
    def __init__(self, vocab_size: int, hidden_dim: int = 32, max_len: int = 20,
                 rng: np.random.Generator | None = None):
        self.V, self.H, self.max_len = vocab_size, hidden_dim, max_len
        self.input_dim = 2 * vocab_size
        self.params = ParamStore({
            "W1": (hidden_dim, self.input_dim), "b1": (hidden_dim,),
            "W2": (hidden_dim, hidden_dim), "b2": (hidden_dim,),
            "w3": (hidden_dim,), "b3": (1,),
        })
        self.zero_output = False
        if rng is not None:
            P = self.params
            P["W1"] = rng.standard_normal(P.shapes["W1"]) / np.sqrt(self.input_dim)
            P["W2"] = rng.standard_normal(P.shapes["W2"]) / np.sqrt(hidden_dim)
            P["w3"] = rng.standard_normal(hidden_dim) / np.sqrt(hidden_dim)

    @property
    def size(self) -> int:
        return self.params.size

    def config(self) -> dict:
        return {"vocab_size": self.V, "hidden_dim": self.H, "max_len": self.max_len}

    def build_inputs(self, z: np.ndarray, ref: Sequence[int], lengths: np.ndarray):
        """Pad/truncate relaxed predictions ``(N, L, V)`` to ``max_len`` and attach the reference.

        Returns the input tensor ``(N, max_len, 2V)`` and the per-position mean
        weights ``(N, max_len)`` (``1/len`` on real positions, 0 on padding).
        """
        N, L, V = z.shape
        if V != self.V:
            raise ValueError(f"relaxed vectors have size {V}, expected {self.V}")
        M = self.max_len
        X = np.zeros((N, M, 2 * V))
        k = min(L, M)
        X[:, :k, :V] = z[:, :k]
        ref = np.asarray(ref, dtype=np.int64)[:M]
        X[:, np.arange(len(ref)), V + ref] = 1.0
        eff = np.minimum(np.asarray(lengths), M)
        if np.any(eff < 1):
            raise ValueError("relaxed sequence must be nonempty")
        weights = (np.arange(M)[None, :] < eff[:, None]) / eff[:, None]
        return X, weights

    def forward(self, X: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, CVCache]:
        if X.shape[-1] != self.input_dim:
            raise ValueError(f"input dimension {X.shape[-1]} != {self.input_dim}")
        P = self.params
        a1 = X @ P["W1"].T + P["b1"]
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ P["W2"].T + P["b2"]
        h2 = np.maximum(a2, 0.0)
        s = _sigmoid(h2 @ P["w3"] + P["b3"][0])
        cache = CVCache(X, weights, a1, h1, a2, h2, s, P.data.copy())
        if self.zero_output:
            return np.zeros(X.shape[0]), cache
        return (weights * s).sum(axis=1), cache

    def _check(self, cache: CVCache):
        if not np.array_equal(cache.snapshot, self.params.data):
            raise ValueError("stale cache: parameters changed since forward")

    def backward(self, cache: CVCache, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``sum_n upstream_n * c_n`` w.r.t. phi (flat) and the inputs.

        ``upstream`` is per sample ``(N,)``, or per position ``(N, M)`` to weight
        each position's sigmoid output individually (the mean weights are then
        the caller's responsibility).
        """
        self._check(cache)
        P = self.params
        upstream = np.asarray(upstream, dtype=np.float64)
        N = cache.X.shape[0]
        if upstream.ndim == 0:
            upstream = np.full(N, float(upstream))
        gpos = upstream[:, None] * cache.weights if upstream.ndim == 1 else upstream
        grad = np.zeros(self.size)
        if self.zero_output:
            return grad, np.zeros_like(cache.X)
        g = P.view(grad)
        do = gpos * cache.s * (1.0 - cache.s)
        g["b3"][0] = do.sum()
        g["w3"][:] = np.einsum("nm,nmh->h", do, cache.h2)
        da2 = do[..., None] * P["w3"] * (cache.a2 > 0)
        g["W2"][:] = np.einsum("nmi,nmj->ij", da2, cache.h1)
        g["b2"][:] = da2.sum(axis=(0, 1))
        da1 = (da2 @ P["W2"]) * (cache.a1 > 0)
        g["W1"][:] = np.einsum("nmi,nmj->ij", da1, cache.X)
        g["b1"][:] = da1.sum(axis=(0, 1))
        return grad, da1 @ P["W1"]

    def directional(self, cache: CVCache, X_dot: np.ndarray, pos_weights: np.ndarray):
        """Directional derivative of the outputs along input tangents, and its phi-gradient.

        Returns ``D`` with ``D_n = sum_t pos_weights[n,t] * d sigma_t`` along
        ``X_dot`` and the flat gradient of ``sum_n D_n`` w.r.t. phi (exact;
        ReLU second derivatives vanish almost everywhere).
        """
        self._check(cache)
        P = self.params
        grad = np.zeros(self.size)
        if self.zero_output:
            return np.zeros(X_dot.shape[0]), grad
        r1, r2 = cache.a1 > 0, cache.a2 > 0
        s = cache.s
        ds_do = s * (1.0 - s)
        a1_dot = X_dot @ P["W1"].T
        h1_dot = r1 * a1_dot
        a2_dot = h1_dot @ P["W2"].T
        h2_dot = r2 * a2_dot
        o_dot = h2_dot @ P["w3"]
        D = (pos_weights * ds_do * o_dot).sum(axis=1)

        g = P.view(grad)
        g_odot = pos_weights * ds_do
        g_o = pos_weights * o_dot * ds_do * (1.0 - 2.0 * s)
        g["w3"][:] = np.einsum("nm,nmh->h", g_odot, h2_dot) + np.einsum("nm,nmh->h", g_o, cache.h2)
        g["b3"][0] = g_o.sum()
        g_a2dot = g_odot[..., None] * P["w3"] * r2
        g_a2 = g_o[..., None] * P["w3"] * r2
        g["W2"][:] = np.einsum("nmi,nmj->ij", g_a2dot, h1_dot) + np.einsum("nmi,nmj->ij", g_a2, cache.h1)
        g["b2"][:] = g_a2.sum(axis=(0, 1))
        g_a1dot = (g_a2dot @ P["W2"]) * r1
        g_a1 = (g_a2 @ P["W2"]) * r1
        g["W1"][:] = np.einsum("nmi,nmj->ij", g_a1dot, X_dot) + np.einsum("nmi,nmj->ij", g_a1, cache.X)
        g["b1"][:] = g_a1.sum(axis=(0, 1))
        return D, grad

    # -- single-sequence convenience ---------------------------------------------

    def cv_forward(self, relaxed_seq: Sequence[np.ndarray], ref: Sequence[int]):
        if len(relaxed_seq) == 0:
            raise ValueError("relaxed sequence must be nonempty")
        z = np.asarray(relaxed_seq, dtype=np.float64)[None]
        X, w = self.build_inputs(z, ref, np.array([z.shape[1]]))
        value, cache = self.forward(X, w)
        return float(value[0]), cache

    def cv_backward(self, cache: CVCache, upstream: float):
        grad, gX = self.backward(cache, np.array([float(upstream)]))
        n = int((cache.weights[0] > 0).sum())
        return grad, [row for row in gX[0, :n, :self.V]]

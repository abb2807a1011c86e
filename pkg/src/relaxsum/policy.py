"""Miniature autoregressive policy p(y_t | y_{t-1}, x) with exact gradients.

The next-token distribution depends on the previous token and on a
normalised bag-of-words of the input::

    h_t    = tanh(W_e E[y_{t-1}] + W_x bag(x) + b)
    logits = U h_t + c

Small enough that every sequence of a short fixed length can be enumerated,
while keeping the autoregressive factorisation the estimators act on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from relaxsum import gumbel
from relaxsum.coverage_reward import DocumentSet
from relaxsum.params import ParamStore
from relaxsum.vocab import BOS, EOS

HARD = "hard_categorical"
GUMBEL = "gumbel"


def input_bag(x, vocab_size: int) -> np.ndarray:
    """Normalised token-count vector of ``x`` (a DocumentSet or a token sequence)."""
    if isinstance(x, np.ndarray) and x.dtype.kind == "f":
        if x.shape != (vocab_size,):
            raise ValueError("bag vector has wrong length")
        return x
    if isinstance(x, DocumentSet):
        tokens = []
        for i, d in enumerate(x.documents):
            if i:
                tokens.append(x.separator_token)
            tokens.extend(d)
    else:
        tokens = list(x)
    counts = np.bincount(np.asarray(tokens, dtype=np.int64), minlength=vocab_size).astype(np.float64)
    if counts.shape[0] != vocab_size:
        raise ValueError("input token id outside vocabulary")
    total = counts.sum()
    return counts / total if total > 0 else counts


@dataclass
class Rollout:
    """A batch of student-forced samples, all arrays indexed ``[sample, step]``."""
    prev: np.ndarray        # (N, L) int
    tokens: np.ndarray      # (N, L) int
    alive: np.ndarray       # (N, L) bool, step is part of the sequence
    hidden: np.ndarray      # (N, L, h)
    logp: np.ndarray        # (N, L, V)
    perturbed: np.ndarray | None  # (N, L, V), gumbel mode only
    xbar: np.ndarray        # (V,)

    @property
    def lengths(self) -> np.ndarray:
        return self.alive.sum(axis=1)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)

    def sequence(self, n: int) -> tuple[int, ...]:
        return tuple(int(t) for t in self.tokens[n, :self.lengths[n]])


class ToyPolicy:
    def __init__(self, vocab_size: int, embed_dim: int = 16, hidden_dim: int = 32,
                 bos_id: int = BOS, eos_id: int | None = EOS,
                 rng: np.random.Generator | None = None, init_scale: float = 0.1):
        if not 0 <= bos_id < vocab_size:
            raise ValueError("bos_id must be a valid token id")
        if eos_id is not None and not 0 <= eos_id < vocab_size:
            raise ValueError("eos_id must be a valid token id")
        self.V, self.d, self.h = vocab_size, embed_dim, hidden_dim
        self.bos_id, self.eos_id = bos_id, eos_id
        self.params = ParamStore({
            "E": (vocab_size, embed_dim),
            "W_x": (hidden_dim, vocab_size),
            "W_e": (hidden_dim, embed_dim),
            "b": (hidden_dim,),
            "U": (vocab_size, hidden_dim),
            "c": (vocab_size,),
        })
        if rng is not None:
            self.params.data[:] = init_scale * rng.standard_normal(self.params.size)

    @property
    def size(self) -> int:
        return self.params.size

    def config(self) -> dict:
        return {"vocab_size": self.V, "embed_dim": self.d, "hidden_dim": self.h,
                "bos_id": self.bos_id, "eos_id": self.eos_id}

    def copy(self) -> "ToyPolicy":
        out = ToyPolicy(self.V, self.d, self.h, self.bos_id, self.eos_id)
        out.params = self.params.copy()
        return out

    def bag(self, x) -> np.ndarray:
        return input_bag(x, self.V)

    # -- forward ---------------------------------------------------------------

    def _check_tokens(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.V):
            raise ValueError(f"token id outside vocabulary of size {self.V}")
        return tokens

    def hidden(self, prev: np.ndarray, xbar: np.ndarray) -> np.ndarray:
        P = self.params
        ctx = P["W_x"] @ xbar + P["b"]
        return np.tanh(P["E"][prev] @ P["W_e"].T + ctx)

    def output(self, hid: np.ndarray) -> np.ndarray:
        return hid @ self.params["U"].T + self.params["c"]

    def logits_at(self, prev_token: int, x) -> np.ndarray:
        prev = self._check_tokens(prev_token)
        return self.output(self.hidden(prev, self.bag(x)))

    def probs_at(self, prev_token: int, x) -> np.ndarray:
        return gumbel.softmax(self.logits_at(prev_token, x))

    def teacher_forced(self, y: Sequence[int], x):
        y = self._check_tokens(list(y))
        if y.size == 0:
            raise ValueError("target sequence must be nonempty")
        prev = np.concatenate([[self.bos_id], y[:-1]])
        xbar = self.bag(x)
        hid = self.hidden(prev, xbar)
        return prev, y, xbar, hid, gumbel.log_softmax(self.output(hid))

    def sequence_log_prob(self, y: Sequence[int], x) -> float:
        _, y, _, _, logp = self.teacher_forced(y, x)
        return float(logp[np.arange(len(y)), y].sum())

    def nll_grad(self, y: Sequence[int], x) -> tuple[float, np.ndarray]:
        """Negative log-likelihood of ``y`` and its flat gradient."""
        prev, y, xbar, hid, logp = self.teacher_forced(y, x)
        dl = np.exp(logp)
        dl[np.arange(len(y)), y] -= 1.0
        grad = self.backward(prev[None], hid[None], xbar, dl[None])[0]
        return -float(logp[np.arange(len(y)), y].sum()), grad

    # -- reverse and forward mode -----------------------------------------------

    def backward(self, prev: np.ndarray, hid: np.ndarray, xbar: np.ndarray, dlogits: np.ndarray) -> np.ndarray:
        """Per-sample parameter gradients ``(N, size)`` from logit gradients ``(N, L, V)``.

        Gradients are summed over steps; masked steps must carry zero ``dlogits``.
        """
        P = self.params
        N = prev.shape[0]
        out = np.zeros((N, self.size))
        g = P.view(out)
        g["c"][:] = dlogits.sum(axis=1)
        g["U"][:] = np.einsum("ntv,nth->nvh", dlogits, hid)
        da = (dlogits @ P["U"]) * (1.0 - hid ** 2)
        da_sum = da.sum(axis=1)
        g["b"][:] = da_sum
        g["W_x"][:] = da_sum[:, :, None] * xbar[None, None, :]
        g["W_e"][:] = np.einsum("nth,ntd->nhd", da, P["E"][prev])
        onehot = np.eye(self.V)[prev]
        g["E"][:] = np.einsum("ntv,ntd->nvd", onehot, da @ P["W_e"])
        return out

    def jvp(self, prev: np.ndarray, hid: np.ndarray, xbar: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """Logit tangents ``(N, L, V)`` for per-sample parameter directions ``(N, size)``."""
        P = self.params
        d = P.view(direction)
        N = prev.shape[0]
        d_eprev = d["E"][np.arange(N)[:, None], prev]
        da = (np.einsum("nhd,ntd->nth", d["W_e"], P["E"][prev])
              + d_eprev @ P["W_e"].T
              + (np.einsum("nhv,v->nh", d["W_x"], xbar) + d["b"])[:, None, :])
        dh = (1.0 - hid ** 2) * da
        return np.einsum("nvh,nth->ntv", d["U"], hid) + dh @ P["U"].T + d["c"][:, None, :]

    # -- sampling and decoding --------------------------------------------------

    def rollout(self, x, uniforms: np.ndarray, mode: str = GUMBEL) -> Rollout:
        """Student-forced sampling driven by pre-drawn ``uniforms`` of shape (N, L, V).

        Gumbel mode takes the argmax of Gumbel-perturbed log-probabilities;
        hard mode inverts the CDF with ``uniforms[:, t, 0]``. Sampling stops
        per sequence at EOS (when the policy has one) or after L steps.
        """
        if mode not in (HARD, GUMBEL):
            raise ValueError(f"unknown sampling mode {mode!r}")
        N, L, V = uniforms.shape
        if V != self.V or L < 1:
            raise ValueError("uniforms must have shape (N, max_len>=1, vocab_size)")
        xbar = self.bag(x)
        prev = np.empty((N, L), dtype=np.int64)
        tokens = np.zeros((N, L), dtype=np.int64)
        alive = np.zeros((N, L), dtype=bool)
        hidden = np.zeros((N, L, self.h))
        logp = np.zeros((N, L, V))
        pert = np.zeros((N, L, V)) if mode == GUMBEL else None
        cur = np.full(N, self.bos_id, dtype=np.int64)
        live = np.ones(N, dtype=bool)
        for t in range(L):
            prev[:, t] = cur
            alive[:, t] = live
            hid = self.hidden(cur, xbar)
            lp = gumbel.log_softmax(self.output(hid))
            hidden[:, t], logp[:, t] = hid, lp
            if mode == GUMBEL:
                pt = gumbel.perturb(lp, uniforms[:, t])
                pert[:, t] = pt
                tok = pt.argmax(axis=-1)
            else:
                cdf = np.cumsum(np.exp(lp), axis=-1)
                tok = np.minimum((cdf < uniforms[:, t, :1]).sum(axis=-1), V - 1)
            tokens[:, t] = tok
            if self.eos_id is not None:
                live = live & (tok != self.eos_id)
            cur = tok
            if not live.any():
                prev[:, t + 1:] = cur[:, None]
                break
        return Rollout(prev, tokens, alive, hidden, logp, pert, xbar)

    def sample_sequence(self, x, mode: str = GUMBEL, max_len: int = 20, temperature: float | None = None,
                        rng: np.random.Generator | None = None):
        """Sample one sequence; in gumbel mode also return a :class:`GumbelSample` per step."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        tau = temperature if temperature is not None else gumbel.TemperatureParam().tau
        ro = self.rollout(x, rng.random((1, max_len, self.V)), mode)
        seq = ro.sequence(0)
        steps = []
        if mode == GUMBEL:
            for t in range(len(seq)):
                pt = ro.perturbed[0, t]
                steps.append(gumbel.GumbelSample(z=gumbel.relax(pt, tau), hard_token=int(seq[t]),
                                                 probs=np.exp(ro.logp[0, t]), tau=tau, perturbed=pt))
        return seq, steps

    def greedy_decode(self, x, max_len: int = 20) -> tuple[int, ...]:
        """Argmax decoding; ties go to the lowest token id."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        xbar = self.bag(x)
        cur, out = self.bos_id, []
        for _ in range(max_len):
            tok = int(self.output(self.hidden(np.array([cur]), xbar))[0].argmax())
            out.append(tok)
            if tok == self.eos_id:
                break
            cur = tok
        return tuple(out)


def strip_eos(seq: Sequence[int], eos_id: int | None = EOS) -> tuple[int, ...]:
    seq = tuple(seq)
    if eos_id is not None and seq and seq[-1] == eos_id:
        return seq[:-1]
    return seq

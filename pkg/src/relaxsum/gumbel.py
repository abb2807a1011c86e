"""Gumbel-Softmax relaxed sampling, the conditional relaxed sample, and temperature.

Array functions operate on the last axis and broadcast over leading axes, so
the same code serves single draws and batches of sequences.

Conditional sample, with ``b`` the realised token and ``v ~ U(0,1)^V``::

    zeta_b = -log(-log v_b)
    zeta_k = -log(-log(v_k) / p_k - log v_b)      k != b

``softmax(zeta / tau)`` then has the law of the unconditional relaxed sample
given that its argmax is ``b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

U_MIN = 1e-12
U_MAX = 1.0 - 1e-12
PROB_FLOOR = 1e-30
LOG_TAU_INIT = 0.5


@dataclass
class TemperatureParam:
    log_tau: float = LOG_TAU_INIT
    grad: float = 0.0

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    def zero_grad(self) -> None:
        self.grad = 0.0


@dataclass
class GumbelSample:
    """One relaxed draw at one decoding step, with the cache needed for backward."""
    z: np.ndarray
    hard_token: int
    probs: np.ndarray
    z_tilde: np.ndarray | None = None
    tau: float = math.exp(LOG_TAU_INIT)
    perturbed: np.ndarray | None = field(default=None, repr=False)
    perturbed_tilde: np.ndarray | None = field(default=None, repr=False)


def clamp_uniform(u: np.ndarray) -> np.ndarray:
    return np.clip(u, U_MIN, U_MAX)


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return x - m - np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def perturb(logp: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Gumbel-perturbed log-probabilities ``log p + g``; argmax is a Cat(p) draw."""
    return logp - np.log(-np.log(clamp_uniform(u)))


def conditional_perturb(logp: np.ndarray, hard: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Perturbed log-probabilities conditioned on their argmax being ``hard``."""
    v = clamp_uniform(v)
    hard = np.asarray(hard)
    neg_log_v = -np.log(v)
    neg_log_vb = np.take_along_axis(neg_log_v, hard[..., None], axis=-1)
    a = neg_log_v * np.exp(-logp) + neg_log_vb
    zeta = -np.log(a)
    np.put_along_axis(zeta, hard[..., None], -np.log(neg_log_vb), axis=-1)
    return zeta


def conditional_perturb_dlogp(logp: np.ndarray, hard: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Elementwise derivative of :func:`conditional_perturb` w.r.t. ``logp`` (diagonal)."""
    v = clamp_uniform(v)
    neg_log_v = -np.log(v)
    neg_log_vb = np.take_along_axis(neg_log_v, np.asarray(hard)[..., None], axis=-1)
    scaled = neg_log_v * np.exp(-logp)
    d = scaled / (scaled + neg_log_vb)
    np.put_along_axis(d, np.asarray(hard)[..., None], 0.0, axis=-1)
    return d


def relax(perturbed: np.ndarray, tau: float) -> np.ndarray:
    return softmax(perturbed / tau)


def softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. softmax inputs given output ``y`` and upstream ``dy``."""
    return y * (dy - (y * dy).sum(axis=-1, keepdims=True))


def softmax_jvp(y: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Tangent of softmax outputs for input tangent ``dx`` (the Jacobian is symmetric)."""
    return softmax_backward(y, dx)


def gumbel_softmax(probs, tau: float, rng: np.random.Generator):
    """Relaxed sample ``z`` and its hard token ``argmax(log p + g)``."""
    probs = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    pert = perturb(logp, rng.random(probs.shape))
    hard = pert.argmax(axis=-1)
    return relax(pert, tau), (int(hard) if hard.ndim == 0 else hard)


def conditional_gumbel_softmax(probs, hard_token, tau: float, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= int(np.max(hard_token)) < probs.shape[-1]:
        raise ValueError("hard_token outside the simplex support")
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    return relax(conditional_perturb(logp, np.asarray(hard_token), rng.random(probs.shape)), tau)


def draw(probs, tau: float, rng: np.random.Generator) -> GumbelSample:
    """Full RELAX draw at one step: ``z``, its argmax, then ``z_tilde`` given the argmax."""
    probs = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.maximum(probs, PROB_FLOOR))
    u, v = rng.random(probs.shape), rng.random(probs.shape)
    pert = perturb(logp, u)
    hard = int(pert.argmax())
    pert_t = conditional_perturb(logp, np.asarray(hard), v)
    return GumbelSample(z=relax(pert, tau), hard_token=hard, probs=probs, z_tilde=relax(pert_t, tau),
                        tau=tau, perturbed=pert, perturbed_tilde=pert_t)


def log_tau_grad(y: np.ndarray, perturbed: np.ndarray, tau: float, upstream: np.ndarray) -> np.ndarray:
    """d(upstream . softmax(perturbed/tau)) / d(log tau), summed over the last axis."""
    ds = softmax_backward(y, upstream)
    return -(ds * perturbed / tau).sum(axis=-1)


def tau_gradient_hook(sample: GumbelSample, upstream_z, upstream_z_tilde=None) -> float:
    """Contribution to d(loss)/d(log tau) through ``z`` and, if given, ``z_tilde``."""
    if sample.perturbed is None:
        raise ValueError("sample has no cached perturbed logits")
    total = float(log_tau_grad(sample.z, sample.perturbed, sample.tau, np.asarray(upstream_z)))
    if upstream_z_tilde is not None:
        if sample.perturbed_tilde is None:
            raise ValueError("sample has no cached conditional perturbed logits")
        total += float(log_tau_grad(sample.z_tilde, sample.perturbed_tilde, sample.tau,
                                    np.asarray(upstream_z_tilde)))
    return total

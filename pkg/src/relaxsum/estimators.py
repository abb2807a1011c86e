"""REINFORCE and RELAX policy-gradient estimators, an enumeration oracle, and statistics.

Conventions
-----------
* ``grad_theta`` in every estimate is the gradient of the *loss* (what an
  optimizer descends): REINFORCE gives ``-r * d log p(y^s)``.
* :func:`exact_gradient_oracle` returns the ascent gradient ``d E[r] / d theta``,
  so an unbiased estimator has mean ``-oracle``.
* Estimates are batched: sample ``n`` of a batch is driven by
  ``np.random.default_rng(seed_n)``, drawing ``(2, max_len, V)`` uniforms
  (Gumbel noise, then conditional noise). A single-sample call with the same
  seed gives the same estimate as the corresponding row of a batch.

RELAX with sequences
--------------------
The control variate is a masked mean of per-position terms, and the context
of position ``t`` depends on the hard tokens before it. Differentiating
``c(z)`` along the reparameterised path with those tokens held fixed misses
the dependence of later positions on earlier discrete choices, so each
position's term additionally picks up a score-function weight on its prefix,
``c_t(z_t) * d log p(y^s_{<t})``. For a single step this term vanishes and the
estimator is the textbook one.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from relaxsum import gumbel
from relaxsum.control_variate import ControlVariate
from relaxsum.coverage_reward import DocumentSet, RewardBreakdown, RewardConfig, combined_reward
from relaxsum.policy import GUMBEL, HARD, Rollout, ToyPolicy, strip_eos

ENUMERATION_BUDGET = 10 ** 6
LOG_TAU_FD_STEP = 1e-4


class Estimator(enum.Enum):
    REINFORCE = "REINFORCE"
    RELAX = "RELAX"


class EnumerationBudgetError(ValueError):
    def __init__(self, required: int, budget: int = ENUMERATION_BUDGET):
        super().__init__(f"enumeration needs {required} sequences, budget is {budget}")
        self.required = required
        self.budget = budget


@dataclass
class EstimationTask:
    """One record: input bag, reference, documents and reward settings, with a reward cache."""
    xbar: np.ndarray
    ref: tuple[int, ...]
    docs: DocumentSet
    reward_cfg: RewardConfig
    max_len: int
    eos_id: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, policy: ToyPolicy, x, ref: Sequence[int], docs: DocumentSet,
              reward_cfg: RewardConfig = RewardConfig(), max_len: int = 20) -> "EstimationTask":
        if len(ref) == 0:
            raise ValueError("empty reference")
        return cls(policy.bag(x), tuple(int(t) for t in ref), docs, reward_cfg, max_len, policy.eos_id)

    def reward(self, seq: Sequence[int]) -> RewardBreakdown:
        key = strip_eos(seq, self.eos_id)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._cache[key] = combined_reward(key, self.ref, self.docs, self.reward_cfg)
        return hit

    def rewards(self, ro: Rollout) -> np.ndarray:
        keyed = np.where(ro.alive, ro.tokens, -1)
        rows, inverse = np.unique(keyed, axis=0, return_inverse=True)
        vals = np.array([self.reward(tuple(int(t) for t in row if t >= 0)).combined for row in rows])
        return vals[inverse.reshape(-1)]


@dataclass
class GradientEstimate:
    grad_theta: np.ndarray
    reward: RewardBreakdown
    grad_phi: np.ndarray | None = None
    grad_log_tau: float | None = None
    sample_id: int | None = None
    sequence: tuple[int, ...] = ()


def draw_noise(seeds: Sequence[int], max_len: int, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniforms ``(N, L, V)`` for sampling and for the conditional relaxed sample."""
    noise = np.stack([np.random.default_rng(int(s)).random((2, max_len, vocab_size)) for s in seeds])
    return noise[:, 0], noise[:, 1]


def _onehot(tokens: np.ndarray, V: int) -> np.ndarray:
    return np.eye(V)[tokens]


def _logits_from_logp_grad(dlogp: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return dlogp - probs * dlogp.sum(axis=-1, keepdims=True)


def score_dlogits(ro: Rollout, V: int) -> np.ndarray:
    """Per-step logit gradient of ``log p(y^s)`` (masked)."""
    return ro.alive[..., None] * (_onehot(ro.tokens, V) - ro.probs)


# -- REINFORCE ---------------------------------------------------------------------


def reinforce_batch(policy: ToyPolicy, task: EstimationTask, uniforms: np.ndarray, mode: str = HARD):
    """Per-sample REINFORCE loss gradients ``(N, P)`` and rewards ``(N,)``."""
    ro = policy.rollout(task.xbar, uniforms, mode)
    f = task.rewards(ro)
    grads = -f[:, None] * policy.backward(ro.prev, ro.hidden, ro.xbar, score_dlogits(ro, policy.V))
    return grads, f, ro


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(int(rng)), int(rng)


def reinforce_estimate(policy: ToyPolicy, x, ref, docs: DocumentSet, reward_cfg: RewardConfig, rng,
                       max_len: int = 20, mode: str = HARD) -> GradientEstimate:
    gen, seed = _as_rng(rng)
    task = EstimationTask.build(policy, x, ref, docs, reward_cfg, max_len)
    u = gen.random((2, max_len, policy.V))
    grads, _, ro = reinforce_batch(policy, task, u[None, 0], mode)
    seq = ro.sequence(0)
    return GradientEstimate(grads[0], task.reward(seq), sample_id=seed, sequence=seq)


# -- RELAX -------------------------------------------------------------------------


@dataclass
class RelaxBatch:
    """Everything one RELAX evaluation produces for a batch of samples."""
    ghat: np.ndarray          # (N, P) ascent estimate of d E[r] / d theta
    rewards: np.ndarray       # (N,)
    c_z: np.ndarray           # (N,)
    c_z_tilde: np.ndarray     # (N,)
    rollout: Rollout
    grad_phi: np.ndarray | None = None
    grad_log_tau: float | None = None

    @property
    def grad_theta(self) -> np.ndarray:
        return -self.ghat


class _RelaxCore:
    """Fixed samples and noise; evaluates the estimator at a given temperature."""

    def __init__(self, policy, cv, task, uniforms, cond_uniforms, prefix_score):
        self.policy, self.cv, self.task = policy, cv, task
        self.prefix_score = prefix_score
        ro = self.ro = policy.rollout(task.xbar, uniforms, GUMBEL)
        self.f = task.rewards(ro)
        self.probs = ro.probs
        self.zeta = gumbel.conditional_perturb(ro.logp, ro.tokens, cond_uniforms)
        self.dzeta = gumbel.conditional_perturb_dlogp(ro.logp, ro.tokens, cond_uniforms)
        self.score = score_dlogits(ro, policy.V)
        self.lengths = ro.lengths
        self.k = min(ro.tokens.shape[1], cv.max_len)

    def _pad(self, gX):
        out = np.zeros_like(self.probs)
        out[:, :self.k] = gX[:, :self.k, :self.policy.V]
        return out

    def evaluate(self, log_tau: float):
        ro, cv, V = self.ro, self.cv, self.policy.V
        tau = math.exp(log_tau)
        z = gumbel.relax(ro.perturbed, tau)
        zt = gumbel.relax(self.zeta, tau)
        Xz, w = cv.build_inputs(z, self.task.ref, self.lengths)
        Xt, _ = cv.build_inputs(zt, self.task.ref, self.lengths)
        c_z, cache_z = cv.forward(Xz, w)
        c_t, cache_t = cv.forward(Xt, w)
        ones = np.ones(len(c_z))
        gz = self._pad(cv.backward(cache_z, ones)[1])
        gt = self._pad(cv.backward(cache_t, ones)[1])
        dlogp_z = gumbel.softmax_backward(z, gz) / tau
        dlogp_t = gumbel.softmax_backward(zt, gt) / tau * self.dzeta

        coef = np.repeat((self.f - c_t)[:, None], ro.tokens.shape[1], axis=1)
        if self.prefix_score and not cv.zero_output:
            pos = np.zeros_like(coef)
            pos[:, :self.k] = (w * cache_z.s)[:, :self.k]
            after = np.cumsum(pos[:, ::-1], axis=1)[:, ::-1]
            coef += after - pos
        dlogits = (coef[..., None] * self.score
                   + ro.alive[..., None] * (_logits_from_logp_grad(dlogp_z, self.probs)
                                            - _logits_from_logp_grad(dlogp_t, self.probs)))
        ghat = self.policy.backward(ro.prev, ro.hidden, ro.xbar, dlogits)
        return ghat, dict(tau=tau, z=z, zt=zt, w=w, c_z=c_z, c_t=c_t, cache_z=cache_z, cache_t=cache_t)

    def phi_grad(self, ghat, parts):
        """Gradient of ``mean_n |ghat_n|^2`` w.r.t. the control-variate parameters."""
        ro, cv, V = self.ro, self.cv, self.policy.V
        N, L = ro.tokens.shape
        tau, w = parts["tau"], parts["w"]
        dlog = self.policy.jvp(ro.prev, ro.hidden, ro.xbar, ghat)
        dlogp = dlog - (self.probs * dlog).sum(axis=-1, keepdims=True)
        step_dot = np.take_along_axis(dlogp, ro.tokens[..., None], axis=-1)[..., 0] * ro.alive
        full_dot = step_dot.sum(axis=1)
        prefix_dot = np.cumsum(step_dot, axis=1) - step_dot
        dz = gumbel.softmax_jvp(parts["z"], dlogp / tau)
        dzt = gumbel.softmax_jvp(parts["zt"], self.dzeta * dlogp / tau)
        M = cv.max_len
        Xdz = np.zeros((N, M, 2 * V))
        Xdt = np.zeros((N, M, 2 * V))
        Xdz[:, :self.k, :V] = dz[:, :self.k]
        Xdt[:, :self.k, :V] = dzt[:, :self.k]

        grad = cv.backward(parts["cache_t"], -full_dot)[0]
        grad += cv.directional(parts["cache_z"], Xdz, w)[1]
        grad -= cv.directional(parts["cache_t"], Xdt, w)[1]
        if self.prefix_score:
            pd = np.zeros((N, M))
            pd[:, :self.k] = prefix_dot[:, :self.k]
            grad += cv.backward(parts["cache_z"], w * pd)[0]
        return 2.0 * grad / N

    def log_tau_grad(self, log_tau: float, step: float = LOG_TAU_FD_STEP) -> float:
        """Central difference of ``mean_n |ghat_n|^2`` in log tau, with the noise held fixed."""
        gp, _ = self.evaluate(log_tau + step)
        gm, _ = self.evaluate(log_tau - step)
        return float(((gp ** 2).sum(axis=1).mean() - (gm ** 2).sum(axis=1).mean()) / (2 * step))


def relax_batch(policy: ToyPolicy, cv: ControlVariate, temp: gumbel.TemperatureParam,
                task: EstimationTask, uniforms: np.ndarray, cond_uniforms: np.ndarray,
                want_phi: bool = False, want_tau: bool = False, prefix_score: bool = True) -> RelaxBatch:
    core = _RelaxCore(policy, cv, task, uniforms, cond_uniforms, prefix_score)
    ghat, parts = core.evaluate(temp.log_tau)
    out = RelaxBatch(ghat, core.f, parts["c_z"], parts["c_t"], core.ro)
    if want_phi:
        out.grad_phi = core.phi_grad(ghat, parts)
    if want_tau:
        out.grad_log_tau = core.log_tau_grad(temp.log_tau)
    return out


def relax_estimate(policy: ToyPolicy, cv_params: ControlVariate, temp: gumbel.TemperatureParam, x, ref,
                   docs: DocumentSet, reward_cfg: RewardConfig, rng, max_len: int = 20,
                   prefix_score: bool = True) -> GradientEstimate:
    gen, seed = _as_rng(rng)
    task = EstimationTask.build(policy, x, ref, docs, reward_cfg, max_len)
    u = gen.random((2, max_len, policy.V))
    res = relax_batch(policy, cv_params, temp, task, u[None, 0], u[None, 1],
                      want_phi=True, want_tau=True, prefix_score=prefix_score)
    seq = res.rollout.sequence(0)
    return GradientEstimate(res.grad_theta[0], task.reward(seq), grad_phi=res.grad_phi,
                            grad_log_tau=res.grad_log_tau, sample_id=seed, sequence=seq)


# -- exact oracle ------------------------------------------------------------------


@dataclass
class OracleResult:
    gradient: np.ndarray   # d E[r] / d theta
    expected_reward: float
    total_mass: float
    n_sequences: int


def exact_gradient_oracle(policy: ToyPolicy, x, ref, docs: DocumentSet, reward_cfg: RewardConfig,
                          T_fixed: int, budget: int = ENUMERATION_BUDGET, chunk: int = 20000) -> OracleResult:
    """Sum of ``r(y) * d p(y) / d theta`` over every length-``T_fixed`` sequence."""
    if policy.eos_id is not None:
        raise ValueError("oracle requires a forced-length policy (eos_id=None)")
    required = policy.V ** T_fixed
    if required > budget:
        raise EnumerationBudgetError(required, budget)
    task = EstimationTask.build(policy, x, ref, docs, reward_cfg, T_fixed)
    grad = np.zeros(policy.size)
    mass = expected = 0.0
    all_seqs = itertools.product(range(policy.V), repeat=T_fixed)
    while True:
        seqs = np.array(list(itertools.islice(all_seqs, chunk)), dtype=np.int64)
        if seqs.size == 0:
            break
        n = seqs.shape[0]
        prev = np.concatenate([np.full((n, 1), policy.bos_id), seqs[:, :-1]], axis=1)
        hid = policy.hidden(prev, task.xbar)
        logp = gumbel.log_softmax(policy.output(hid))
        p_seq = np.exp(np.take_along_axis(logp, seqs[..., None], axis=-1)[..., 0].sum(axis=1))
        r = np.array([task.reward(tuple(s)).combined for s in seqs])
        weight = r * p_seq
        dl = weight[:, None, None] * (_onehot(seqs, policy.V) - np.exp(logp))
        grad += policy.backward(prev, hid, task.xbar, dl).sum(axis=0)
        mass += p_seq.sum()
        expected += weight.sum()
    return OracleResult(grad, expected, mass, required)


# -- statistics --------------------------------------------------------------------


@dataclass
class EstimatorStats:
    """Per-coordinate running mean/variance (Chan et al. merge, order independent)."""
    n: int
    mean: np.ndarray
    m2: np.ndarray
    oracle: np.ndarray | None = None

    @classmethod
    def from_samples(cls, samples: np.ndarray, oracle: np.ndarray | None = None) -> "EstimatorStats":
        mean = samples.mean(axis=0)
        return cls(samples.shape[0], mean, ((samples - mean) ** 2).sum(axis=0), oracle)

    def merge(self, other: "EstimatorStats") -> "EstimatorStats":
        if self.n == 0:
            return EstimatorStats(other.n, other.mean.copy(), other.m2.copy(), self.oracle)
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta ** 2 * self.n * other.n / n
        return EstimatorStats(n, mean, m2, self.oracle if self.oracle is not None else other.oracle)

    @property
    def variance(self) -> np.ndarray:
        if self.n < 2:
            raise ValueError("variance needs at least two estimates")
        return self.m2 / (self.n - 1)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n)

    @property
    def bias(self) -> np.ndarray | None:
        """Mean loss gradient minus the loss-gradient oracle ``-dE[r]/dtheta``."""
        return None if self.oracle is None else self.mean + self.oracle


def _seeds(N: int, rng_base: int | None, seeds: Sequence[int] | None) -> list[int]:
    if seeds is None:
        if N < 2:
            raise ValueError("need N >= 2 estimates")
        return list(range(rng_base, rng_base + N))
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("need N >= 2 estimates")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    return seeds


def estimator_statistics(estimator: Estimator | str, N: int, policy: ToyPolicy, task: EstimationTask,
                         rng_base: int = 0, cv: ControlVariate | None = None,
                         temp: gumbel.TemperatureParam | None = None, oracle: np.ndarray | None = None,
                         seeds: Sequence[int] | None = None, chunk: int = 5000,
                         reinforce_mode: str = HARD, prefix_score: bool = True) -> EstimatorStats:
    estimator = Estimator(estimator)
    seeds = _seeds(N, rng_base, seeds)
    if estimator is Estimator.RELAX and cv is None:
        raise ValueError("RELAX statistics need a control variate")
    temp = temp or gumbel.TemperatureParam()
    stats = EstimatorStats(0, np.zeros(policy.size), np.zeros(policy.size), oracle)
    for i in range(0, len(seeds), chunk):
        u, v = draw_noise(seeds[i:i + chunk], task.max_len, policy.V)
        if estimator is Estimator.REINFORCE:
            g = reinforce_batch(policy, task, u, reinforce_mode)[0]
        else:
            g = relax_batch(policy, cv, temp, task, u, v, prefix_score=prefix_score).grad_theta
        stats = stats.merge(EstimatorStats.from_samples(g))
    return stats


def control_variate_pairs(policy: ToyPolicy, cv: ControlVariate, temp: gumbel.TemperatureParam,
                          task: EstimationTask, seeds: Sequence[int], chunk: int = 5000):
    """``c_phi(z)`` and ``c_phi(z_tilde)`` for each seed."""
    cz, ct = [], []
    for i in range(0, len(seeds), chunk):
        u, v = draw_noise(seeds[i:i + chunk], task.max_len, policy.V)
        res = relax_batch(policy, cv, temp, task, u, v)
        cz.append(res.c_z)
        ct.append(res.c_z_tilde)
    return np.concatenate(cz), np.concatenate(ct)


# -- control-variate fitting ---------------------------------------------------------


def fit_control_variate(policy: ToyPolicy, cv: ControlVariate, temp: gumbel.TemperatureParam,
                        task: EstimationTask, steps: int = 1500, batch: int = 32, lr: float = 1e-2,
                        seed: int = 0, train_tau: bool = True, prefix_score: bool = True) -> list[float]:
    """Minimise the RELAX estimator's second moment over phi (and log tau) with Adam.

    Noise comes from a dedicated stream so fitted parameters are never
    evaluated on the draws they were trained on. Returns the per-step mean
    squared norm of the estimate.
    """
    from relaxsum.optim import Adam

    rng = np.random.default_rng([seed, 0x5EED])
    opt_phi, opt_tau = Adam(cv.size, lr), Adam(1, lr)
    trace = []
    for _ in range(steps):
        u = rng.random((2, batch, task.max_len, policy.V))
        res = relax_batch(policy, cv, temp, task, u[0], u[1], want_phi=True, want_tau=train_tau,
                          prefix_score=prefix_score)
        trace.append(float((res.ghat ** 2).sum(axis=1).mean()))
        opt_phi.step(cv.params.data, res.grad_phi)
        if train_tau:
            lt = np.array([temp.log_tau])
            opt_tau.step(lt, np.array([res.grad_log_tau]))
            temp.log_tau = float(lt[0])
    return trace

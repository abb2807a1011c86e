"""NLL pretraining, few-shot RL fine-tuning, evaluation, and their logs."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from relaxsum import gumbel
from relaxsum.control_variate import ControlVariate
from relaxsum.corpus import CorpusRecord, concat_documents, document_set
from relaxsum.coverage_reward import DocumentSet, RewardConfig, combined_reward, coverage_vector, sample_std
from relaxsum.estimators import EstimationTask, Estimator, draw_noise, reinforce_batch, relax_batch
from relaxsum.optim import Adam
from relaxsum.params import read_checkpoint, save_checkpoint
from relaxsum.policy import HARD, ToyPolicy, input_bag, strip_eos
from relaxsum.text_metrics import Origin, Variant, rouge_f1, tokenize
from relaxsum.vocab import Vocab

log = logging.getLogger(__name__)

STEPLOG_FIELDS = ("step", "reward", "rouge_l", "r_cov_hat", "cov_mean", "cov_std", "log_tau", "nll")
CONFIG_SECTION = "train"


class ConfigError(ValueError):
    """Invalid or unreadable training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    # Large-model values are lr_pretrain 3e-5 and lr_finetune 3e-6; the small policy uses 1000x.
    lr_pretrain: float = 3e-2
    lr_finetune: float = 3e-3
    lr_relax: float = 1e-2
    pretrain_epochs: int = 20
    few_shot_steps: int = 1000
    validate_every: int = 50
    beta: float = 1.0
    max_output_len: int = 12
    max_input_len: int = 256
    estimator: str = "RELAX"
    seed: int = 0
    corpus_seed: int = 0
    embed_dim: int = 16
    hidden_dim: int = 32
    cv_hidden: int = 32
    init_scale: float = 0.1
    log_tau_init: float = gumbel.LOG_TAU_INIT
    train_path: str = ""
    valid_path: str = ""

    def __post_init__(self):
        for name in ("lr_pretrain", "lr_finetune", "lr_relax"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.few_shot_steps < 1:
            raise ConfigError("few_shot_steps must be >= 1")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if self.max_output_len < 1 or self.max_input_len < 1 or self.validate_every < 1:
            raise ConfigError("lengths and validate_every must be >= 1")
        try:
            Estimator(self.estimator)
        except ValueError:
            raise ConfigError(f"estimator must be one of {[e.value for e in Estimator]}") from None
        RewardConfig(beta=self.beta)

    @property
    def reward_cfg(self) -> RewardConfig:
        return RewardConfig(beta=self.beta)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            conv = {"float": float, "int": int, "str": str}[types[key]]
            try:
                kwargs[key] = conv(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {types[key]}") from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        """Read an INI file whose ``[train]`` section holds ``key = value`` pairs."""
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not parser.has_section(CONFIG_SECTION):
            raise ConfigError(f"{path}: missing [{CONFIG_SECTION}] section")
        return cls.from_mapping(dict(parser[CONFIG_SECTION]))

    def to_file(self, path: str | Path) -> None:
        parser = configparser.ConfigParser()
        parser[CONFIG_SECTION] = {k: str(v) for k, v in dataclasses.asdict(self).items()}
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)


@dataclass
class StepLog:
    step: int
    reward: float | None = None
    rouge_l: float | None = None
    r_cov_hat: float | None = None
    cov_mean: float | None = None
    cov_std: float | None = None
    log_tau: float | None = None
    nll: float | None = None

    def row(self) -> list[str]:
        return [str(self.step)] + ["" if v is None else repr(float(v))
                                   for v in (getattr(self, k) for k in STEPLOG_FIELDS[1:])]


def write_steplog(rows: Sequence[StepLog], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEPLOG_FIELDS)
        for r in rows:
            w.writerow(r.row())


def read_steplog(path: str | Path) -> list[StepLog]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != STEPLOG_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [StepLog(int(r["step"]), *(float(r[k]) if r[k] else None for k in STEPLOG_FIELDS[1:]))
                for r in reader]


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` values (shorter at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


# -- data preparation ------------------------------------------------------------


@dataclass
class Example:
    id: str
    xbar: np.ndarray
    ref: tuple[int, ...]
    docs: DocumentSet


def prepare(records: Sequence[CorpusRecord], vocab: Vocab, cfg: TrainConfig) -> list[Example]:
    out = []
    for r in records:
        docs = document_set(r, vocab)
        x = concat_documents(docs, max_input_len=cfg.max_input_len)
        ref = tokenize(r.summary, vocab, Origin.REFERENCE).tokens
        if not ref:
            raise ValueError(f"record {r.id}: summary has no tokens")
        out.append(Example(r.id, input_bag(x.tokens, len(vocab)), ref, docs))
    return out


def new_policy(cfg: TrainConfig, vocab_size: int) -> ToyPolicy:
    rng = np.random.default_rng([cfg.seed, 0])
    return ToyPolicy(vocab_size, cfg.embed_dim, cfg.hidden_dim, rng=rng, init_scale=cfg.init_scale)


# -- pretraining -------------------------------------------------------------------


@dataclass
class PretrainResult:
    policy: ToyPolicy
    logs: list[StepLog]
    best_step: int
    best_score: float
    history: list[tuple[int, float]] = field(default_factory=list)


def mean_rouge(policy: ToyPolicy, examples: Sequence[Example], max_len: int) -> float:
    """Average of R1, R2 and RL F1 over greedy decodes."""
    total = 0.0
    for ex in examples:
        pred = strip_eos(policy.greedy_decode(ex.xbar, max_len), policy.eos_id)
        total += sum(rouge_f1(pred, ex.ref, v) for v in Variant) / 3
    return total / len(examples)


def pretrain_nll(cfg: TrainConfig, train: Sequence[Example], valid: Sequence[Example],
                 policy: ToyPolicy | None = None, vocab_size: int | None = None) -> PretrainResult:
    """Teacher-forced NLL with Adam (batch 1), keeping the parameters with the best validation ROUGE."""
    if not train or not valid:
        raise ValueError("pretraining needs nonempty train and validation splits")
    if policy is None:
        if vocab_size is None:
            raise ValueError("vocab_size is required without an initial policy")
        policy = new_policy(cfg, vocab_size)
    policy = policy.copy()
    opt = Adam(policy.size, cfg.lr_pretrain)
    rng = np.random.default_rng([cfg.seed, 1])
    logs: list[StepLog] = []
    best = policy.params.copy()
    best_score = mean_rouge(policy, valid, cfg.max_output_len)
    best_step, history = 0, [(0, best_score)]
    step = 0
    for _ in range(cfg.pretrain_epochs):
        for i in rng.permutation(len(train)):
            ex = train[i]
            nll, grad = policy.nll_grad(ex.ref + (policy.eos_id,), ex.xbar)
            opt.step(policy.params.data, grad)
            step += 1
            logs.append(StepLog(step, nll=nll))
            if step % cfg.validate_every == 0:
                score = mean_rouge(policy, valid, cfg.max_output_len)
                history.append((step, score))
                logs[-1].rouge_l = score
                if score > best_score:
                    best, best_score, best_step = policy.params.copy(), score, step
    if step and step % cfg.validate_every:
        score = mean_rouge(policy, valid, cfg.max_output_len)
        history.append((step, score))
        if score > best_score:
            best, best_score, best_step = policy.params.copy(), score, step
    policy.params = best
    log.info("pretraining: %d steps, best validation ROUGE %.4f at step %d", step, best_score, best_step)
    return PretrainResult(policy, logs, best_step, best_score, history)


# -- fine-tuning -------------------------------------------------------------------


@dataclass
class FinetuneResult:
    policy: ToyPolicy
    cv: ControlVariate | None
    temp: gumbel.TemperatureParam | None
    logs: list[StepLog]


def finetune_rl(cfg: TrainConfig, train: Sequence[Example], pretrained: ToyPolicy) -> FinetuneResult:
    """``few_shot_steps`` single-sample policy-gradient steps on the combined reward."""
    if not train:
        raise ValueError("fine-tuning needs a nonempty train split")
    policy = pretrained.copy()
    est = Estimator(cfg.estimator)
    V, L = policy.V, cfg.max_output_len
    opt = Adam(policy.size, cfg.lr_finetune)
    cv = temp = None
    if est is Estimator.RELAX:
        cv = ControlVariate(V, cfg.cv_hidden, L, rng=np.random.default_rng([cfg.seed, 2]))
        temp = gumbel.TemperatureParam(cfg.log_tau_init)
        opt_phi = Adam(cv.size, cfg.lr_relax)
        opt_tau = Adam(1, cfg.lr_relax)
    order_rng = np.random.default_rng([cfg.seed, 3])
    noise_base = int(np.random.default_rng([cfg.seed, 4]).integers(2 ** 62))
    order: list[int] = []
    logs: list[StepLog] = []
    tasks: dict[int, EstimationTask] = {}
    for step in range(cfg.few_shot_steps):
        if not order:
            order = list(order_rng.permutation(len(train)))
        i = int(order.pop())
        ex = train[i]
        task = tasks.get(i)
        if task is None:
            task = tasks[i] = EstimationTask(ex.xbar, ex.ref, ex.docs, cfg.reward_cfg, L, policy.eos_id)
        u, v = draw_noise([noise_base + step], L, V)
        if est is Estimator.RELAX:
            res = relax_batch(policy, cv, temp, task, u, v, want_phi=True, want_tau=True)
            grad, ro = res.grad_theta[0], res.rollout
            opt_phi.step(cv.params.data, res.grad_phi)
            lt = np.array([temp.log_tau])
            opt_tau.step(lt, np.array([res.grad_log_tau]))
            temp.log_tau = float(lt[0])
        else:
            g, _, ro = reinforce_batch(policy, task, u, HARD)
            grad = g[0]
        seq = ro.sequence(0)
        rb = task.reward(seq)
        cov = rb.coverage_pred.values
        nll = -policy.sequence_log_prob(ex.ref + (policy.eos_id,), ex.xbar)
        opt.step(policy.params.data, grad)
        logs.append(StepLog(step, rb.combined, rb.rouge_l_f1, rb.r_cov_hat, float(np.mean(cov)),
                            sample_std(cov), temp.log_tau if temp else None, nll))
    return FinetuneResult(policy, cv, temp, logs)


# -- evaluation --------------------------------------------------------------------


@dataclass
class MetricsRow:
    system: str
    record_id: str
    r1: float
    r2: float
    rl: float
    efc: tuple[float, ...]
    doc_rouge: tuple[float, ...]
    combined: float

    FIELDS = ("system", "record_id", "r1", "r2", "rl", "efc", "doc_rouge", "combined")

    def row(self) -> list[str]:
        f = lambda v: repr(float(v))
        return [self.system, self.record_id, f(self.r1), f(self.r2), f(self.rl),
                " ".join(map(f, self.efc)), " ".join(map(f, self.doc_rouge)), f(self.combined)]


def metrics_row(system: str, record_id: str, pred: Sequence[int], ref: Sequence[int], docs: DocumentSet,
                reward_cfg: RewardConfig = RewardConfig()) -> MetricsRow:
    pred, ref = tuple(pred), tuple(ref)
    return MetricsRow(
        system, record_id,
        rouge_f1(pred, ref, Variant.R1), rouge_f1(pred, ref, Variant.R2), rouge_f1(pred, ref, Variant.RL),
        coverage_vector(pred, docs, reward_cfg.min_fragment_len).values,
        tuple(rouge_f1(pred, d, Variant.RL) for d in docs),
        combined_reward(pred, ref, docs, reward_cfg).combined,
    )


def write_metrics(rows: Sequence[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsRow.FIELDS)
        for r in rows:
            w.writerow(r.row())


@dataclass
class EvalResult:
    rows: list[MetricsRow]
    predictions: list[tuple[int, ...]]
    r1: float
    r2: float
    rl: float
    position_efc: np.ndarray
    position_rouge: np.ndarray
    position_counts: np.ndarray

    @property
    def mean_efc(self) -> float:
        """Mean per-document EFC over every (record, document) pair."""
        return float((self.position_efc * self.position_counts).sum() / self.position_counts.sum())


def evaluate(policy: ToyPolicy, examples: Sequence[Example], max_len: int, system: str = "model",
             reward_cfg: RewardConfig = RewardConfig()) -> EvalResult:
    """Greedy-decode every record and aggregate ROUGE and EFC by document position."""
    rows, preds = [], []
    for ex in examples:
        pred = strip_eos(policy.greedy_decode(ex.xbar, max_len), policy.eos_id)
        preds.append(pred)
        rows.append(metrics_row(system, ex.id, pred, ex.ref, ex.docs, reward_cfg))
    width = max((len(ex.docs) for ex in examples), default=0)
    efc_sum, rouge_sum, counts = np.zeros(width), np.zeros(width), np.zeros(width, dtype=np.int64)
    for r in rows:
        k = len(r.efc)
        efc_sum[:k] += r.efc
        rouge_sum[:k] += r.doc_rouge
        counts[:k] += 1
    n = max(len(rows), 1)
    safe = np.maximum(counts, 1)
    return EvalResult(rows, preds,
                      sum(r.r1 for r in rows) / n, sum(r.r2 for r in rows) / n, sum(r.rl for r in rows) / n,
                      efc_sum / safe, rouge_sum / safe, counts)


def write_positions(res: EvalResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("position", "count", "mean_efc", "mean_rouge_l"))
        for i, (c, e, r) in enumerate(zip(res.position_counts, res.position_efc, res.position_rouge)):
            w.writerow((i, int(c), repr(float(e)), repr(float(r))))


# -- checkpoints -------------------------------------------------------------------


def save_model(path: str | Path, policy: ToyPolicy, vocab: Vocab, cv: ControlVariate | None = None,
               temp: gumbel.TemperatureParam | None = None) -> None:
    stores = {"policy": policy.params}
    meta = {"policy": policy.config(), "vocab": vocab.words}
    if cv is not None:
        stores["control_variate"] = cv.params
        meta["control_variate"] = cv.config()
    if temp is not None:
        meta["log_tau"] = temp.log_tau
    save_checkpoint(path, stores, meta)


def load_model(path: str | Path):
    """Return ``(policy, vocab, cv_or_None, temp_or_None)`` from a checkpoint."""
    doc = read_checkpoint(path)
    meta, stores = doc["meta"], doc["stores"]
    pc = meta["policy"]
    policy = ToyPolicy(pc["vocab_size"], pc["embed_dim"], pc["hidden_dim"], pc["bos_id"], pc["eos_id"])
    policy.params.load_dict(stores["policy"])
    vocab = Vocab(meta["vocab"], frozen=True)
    if len(vocab) != policy.V:
        raise ValueError(f"{path}: vocabulary size {len(vocab)} != policy size {policy.V}")
    cv = temp = None
    if "control_variate" in stores:
        cc = meta["control_variate"]
        cv = ControlVariate(cc["vocab_size"], cc["hidden_dim"], cc["max_len"])
        cv.params.load_dict(stores["control_variate"])
    if "log_tau" in meta:
        lt = float(meta["log_tau"])
        if not math.isfinite(lt):
            raise ValueError(f"{path}: non-finite log_tau")
        temp = gumbel.TemperatureParam(lt)
    return policy, vocab, cv, temp

"""A small fixed estimation problem whose sequences can all be enumerated."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relaxsum.coverage_reward import DocumentSet, RewardConfig
from relaxsum.estimators import EstimationTask
from relaxsum.policy import ToyPolicy


@dataclass
class ToyProblem:
    policy: ToyPolicy
    x: tuple[int, ...]
    ref: tuple[int, ...]
    docs: DocumentSet
    reward_cfg: RewardConfig
    max_len: int

    def task(self) -> EstimationTask:
        return EstimationTask.build(self.policy, self.x, self.ref, self.docs, self.reward_cfg, self.max_len)


def toy_problem(vocab_size: int = 3, max_len: int = 2, seed: int = 3, embed_dim: int = 2,
                hidden_dim: int = 3, init_scale: float = 0.5, beta: float = 1.0) -> ToyProblem:
    """Forced-length policy over ``vocab_size`` tokens with three overlapping documents.

    The last token id is shared by every document, the others appear in
    different orders, and the reference repeats token 0, so every sequence
    gets a distinct mix of ROUGE-L and coverage reward, all non-negative.
    """
    V = vocab_size
    if V < 2 or max_len < 1:
        raise ValueError("need vocab_size >= 2 and max_len >= 1")
    top = V - 1
    docs = DocumentSet(((top, *range(top)), (top, *range(top - 1, -1, -1)), (top, top)))
    policy = ToyPolicy(V, embed_dim, hidden_dim, bos_id=0, eos_id=None,
                       rng=np.random.default_rng(seed), init_scale=init_scale)
    x = tuple(i % V for i in (0, 1, 1, 2))
    return ToyProblem(policy, x, (0,) * max_len, docs, RewardConfig(beta=beta), max_len)

"""Offline learning and evaluation from joined decision/reward logs.

Training runs an importance-weighted per-action least-squares regression:
each example updates only the logged action's weights, pulling that
action's score toward the observed reward with weight min(1/p, cap). The
update is the implicit (proximal) form of the squared-error gradient step,
step = lr*iw*(r - s) / (1 + lr*iw*|x|^2), which stays stable for any
learning rate even when rare-action importance weights are large.

Evaluation is inverse propensity scoring with the same weight cap.
Everything here is single-threaded and deterministic given its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random
from typing import Sequence

from .errors import EmptyTrainingSetError, ZeroPropensityError
from .logs import JoinedExample
from .policy import (
    DEFAULT_EPSILON,
    DEFAULT_HASH_BITS,
    Context,
    HashedVector,
    LinearPolicy,
    encode_context,
    fnv1a_64,
    greedy_action,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    passes: int = 4
    weight_cap: float = 100.0
    hash_bits: int = DEFAULT_HASH_BITS
    epsilon_out: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.passes <= 0:
            raise ValueError("passes must be positive")
        if self.weight_cap <= 0:
            raise ValueError("weight_cap must be positive")
        if not 0.0 <= self.epsilon_out <= 1.0:
            raise ValueError("epsilon_out must lie in [0, 1]")


@dataclass(frozen=True)
class OpeReport:
    """Off-policy value estimate with its sampling error."""

    ips_value: float
    stderr: float
    n_examples: int
    clipped_fraction: float


class _EncodingCache:
    """Context -> hashed vector cache; contexts repeat heavily in logs."""

    def __init__(self, hash_bits: int) -> None:
        self.hash_bits = hash_bits
        self._cache: dict[tuple, tuple[HashedVector, float]] = {}

    def get(self, context: Context) -> tuple[HashedVector, float]:
        key = context.features
        hit = self._cache.get(key)
        if hit is None:
            x = encode_context(context, self.hash_bits)
            hit = (x, x.squared_norm())
            self._cache[key] = hit
        return hit


def _infer_actions(examples: Sequence[JoinedExample], actions: Sequence[str] | None) -> tuple[str, ...]:
    if actions is not None:
        return tuple(actions)
    k = max(example.action_index for example in examples) + 1
    return tuple(f"action-{i}" for i in range(max(k, 2)))


def train_policy(
    examples: Sequence[JoinedExample],
    cfg: TrainConfig,
    actions: Sequence[str] | None = None,
    model_id: str | None = None,
) -> LinearPolicy:
    """Fit a greedy-scored policy to joined logs; deterministic given (examples, cfg).

    Examples are reshuffled for each pass from a stream seeded with
    cfg.seed. The produced policy carries epsilon = cfg.epsilon_out.
    """
    examples = list(examples)
    if not examples:
        raise EmptyTrainingSetError("no training examples")
    for example in examples:
        if example.probability <= 0.0:
            raise ZeroPropensityError("training example with probability 0")

    labels = _infer_actions(examples, actions)
    if any(ex.action_index >= len(labels) or ex.action_index < 0 for ex in examples):
        raise ValueError("action index out of range for the action set")

    cache = _EncodingCache(cfg.hash_bits)
    weights: list[dict[int, float]] = [{} for _ in labels]
    lr = cfg.learning_rate
    cap = cfg.weight_cap
    rng = Random(f"train:{cfg.seed}")
    order = list(range(len(examples)))
    for _ in range(cfg.passes):
        rng.shuffle(order)
        for index in order:
            example = examples[index]
            x, x_sq = cache.get(example.context)
            iw = min(1.0 / example.probability, cap)
            vector = weights[example.action_index]
            get = vector.get
            score = sum(get(slot, 0.0) * mult for slot, mult in x.entries.items())
            rate = lr * iw
            step = rate * (example.reward - score) / (1.0 + rate * x_sq)
            for slot, mult in x.entries.items():
                vector[slot] = get(slot, 0.0) + step * mult

    if model_id is None:
        digest = fnv1a_64(f"{len(examples)}:{cfg.seed}:{cfg.hash_bits}".encode())
        model_id = f"trained-{digest % 10**8:08d}"
    return LinearPolicy(
        model_id=model_id,
        actions=labels,
        hash_bits=cfg.hash_bits,
        weights=tuple(weights),
        epsilon=cfg.epsilon_out,
    )


def ips_value(
    examples: Sequence[JoinedExample],
    policy: LinearPolicy,
    weight_cap: float = 100.0,
) -> OpeReport:
    """Inverse-propensity estimate of a deterministic (greedy) policy's value.

    Per-example terms are r * 1[policy(x) = a] / p with the weight capped
    at ``weight_cap``; clipped_fraction counts matching terms whose weight
    hit the cap.
    """
    examples = list(examples)
    if not examples:
        raise EmptyTrainingSetError("no examples to evaluate")
    cache = _EncodingCache(policy.hash_bits)
    choice_cache: dict[tuple, int] = {}
    terms = []
    clipped = 0
    for example in examples:
        if example.probability <= 0.0:
            raise ZeroPropensityError("example with probability 0")
        key = example.context.features
        chosen = choice_cache.get(key)
        if chosen is None:
            x, _ = cache.get(example.context)
            chosen = greedy_action(policy, x)
            choice_cache[key] = chosen
        if chosen == example.action_index:
            weight = 1.0 / example.probability
            if weight > weight_cap:
                weight = weight_cap
                clipped += 1
            terms.append(example.reward * weight)
        else:
            terms.append(0.0)
    n = len(terms)
    mean = sum(terms) / n
    if n > 1:
        variance = sum((t - mean) ** 2 for t in terms) / (n - 1)
        stderr = math.sqrt(variance / n)
    else:
        stderr = 0.0
    return OpeReport(
        ips_value=mean,
        stderr=stderr,
        n_examples=n,
        clipped_fraction=clipped / n,
    )


def make_fixed_policy(
    n_actions: int,
    action_index: int,
    actions: Sequence[str] | None = None,
    hash_bits: int = DEFAULT_HASH_BITS,
) -> LinearPolicy:
    """Deterministic policy that always plays ``action_index`` with probability 1.

    Built as a bias-only scorer favoring the chosen action, with epsilon 0.
    """
    if not 0 <= action_index < n_actions:
        raise IndexError(f"action index {action_index} out of range for {n_actions} actions")
    if actions is None:
        actions = tuple(f"action-{i}" for i in range(n_actions))
    elif len(actions) != n_actions:
        raise ValueError("actions list length must equal n_actions")
    bias_slot = fnv1a_64(b"__bias__") % (1 << hash_bits)
    weights = tuple(
        {bias_slot: 1.0} if i == action_index else {} for i in range(n_actions)
    )
    return LinearPolicy(
        model_id=f"fixed-{action_index}",
        actions=tuple(actions),
        hash_bits=hash_bits,
        weights=weights,
        epsilon=0.0,
    )

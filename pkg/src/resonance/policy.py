"""Compact contextual-bandit policy: hashed linear scorer with epsilon-greedy selection.

A context (a set of feature values) is hashed into a sparse vector of
``2**hash_bits`` slots with 64-bit FNV-1a, which keeps encoding bit-exact
across processes and platforms without any dependency. Each action carries
a sparse weight vector over the same slots; selection is epsilon-greedy
with the exact selection probability reported alongside the action, which
is what makes the decision logs usable for inverse-propensity work later.

Policies are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from random import Random
from typing import Iterable, Sequence

from .broker import FeatureKey, FeatureValue, ValueKind
from .errors import HashBitsMismatchError, MalformedModelError, NonFiniteWeightError

DEFAULT_HASH_BITS = 10
DEFAULT_EPSILON = 0.2

_MODEL_MAGIC = "resonance-policy"
_MODEL_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Context:
    """Unique-keyed collection of feature values; encoding is order-independent."""

    features: tuple[tuple[FeatureKey, FeatureValue], ...]

    def __post_init__(self) -> None:
        keys = [key for key, _ in self.features]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate feature keys in context")

    @classmethod
    def of(cls, pairs: Iterable[tuple[FeatureKey, FeatureValue]]) -> "Context":
        return cls(tuple(pairs))


@dataclass(frozen=True)
class HashedVector:
    """Sparse slot -> multiplier mapping over 2**hash_bits slots."""

    hash_bits: int
    entries: dict[int, float]

    def squared_norm(self) -> float:
        return sum(m * m for m in self.entries.values())


def _bool_token(payload: bool) -> str:
    return "true" if payload else "false"


def encode_context(context: Context, hash_bits: int = DEFAULT_HASH_BITS) -> HashedVector:
    """Hash a context into a sparse vector.

    Bool and categorical features hash "namespace|name=token" with
    multiplier 1.0; int and real features hash "namespace|name" with the
    numeric value as multiplier. Colliding slots sum. A constant bias term
    ("__bias__", multiplier 1.0) is always present. Features are folded in
    canonical (namespace, name) order so the result is independent of the
    caller's ordering.
    """
    n_slots = 1 << hash_bits
    entries: dict[int, float] = {}

    def add(slot: int, multiplier: float) -> None:
        entries[slot] = entries.get(slot, 0.0) + multiplier

    add(fnv1a_64(b"__bias__") % n_slots, 1.0)
    ordered = sorted(context.features, key=lambda kv: (kv[0].namespace, kv[0].name))
    for key, value in ordered:
        if value.kind is ValueKind.BOOL:
            token = _bool_token(value.payload)
            add(fnv1a_64(f"{key.namespace}|{key.name}={token}".encode()) % n_slots, 1.0)
        elif value.kind is ValueKind.CATEGORICAL:
            add(fnv1a_64(f"{key.namespace}|{key.name}={value.payload}".encode()) % n_slots, 1.0)
        else:
            add(fnv1a_64(f"{key.namespace}|{key.name}".encode()) % n_slots, value.numeric)
    return HashedVector(hash_bits=hash_bits, entries=entries)


@dataclass(frozen=True)
class LinearPolicy:
    """Per-action sparse linear scorer plus its exploration rate."""

    model_id: str
    actions: tuple[str, ...]
    hash_bits: int
    weights: tuple[dict[int, float], ...]
    epsilon: float

    def __post_init__(self) -> None:
        if len(self.actions) < 2:
            raise ValueError("a policy needs at least two actions")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("action labels must be unique")
        if len(self.weights) != len(self.actions):
            raise ValueError("one weight vector per action required")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        n_slots = 1 << self.hash_bits
        for vector in self.weights:
            for slot, weight in vector.items():
                if not 0 <= slot < n_slots:
                    raise ValueError(f"slot {slot} out of range for {self.hash_bits} hash bits")
                if not math.isfinite(weight):
                    raise NonFiniteWeightError(f"non-finite weight at slot {slot}")

    @property
    def n_actions(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class Prediction:
    """Chosen action with its exact epsilon-greedy selection probability."""

    action: str
    action_index: int
    probability: float
    scores: tuple[float, ...]
    model_id: str


def zero_policy(
    model_id: str,
    actions: Sequence[str],
    hash_bits: int = DEFAULT_HASH_BITS,
    epsilon: float = DEFAULT_EPSILON,
) -> LinearPolicy:
    """All-zero-weight policy; greedy choice is the lowest-index action."""
    return LinearPolicy(
        model_id=model_id,
        actions=tuple(actions),
        hash_bits=hash_bits,
        weights=tuple({} for _ in actions),
        epsilon=epsilon,
    )


def score_actions(policy: LinearPolicy, x: HashedVector) -> tuple[float, ...]:
    """Sparse dot product of each action's weights with the hashed vector."""
    if x.hash_bits != policy.hash_bits:
        raise HashBitsMismatchError(
            f"vector uses {x.hash_bits} hash bits, policy uses {policy.hash_bits}"
        )
    entries = x.entries
    scores = []
    for vector in policy.weights:
        get = vector.get
        scores.append(sum(get(slot, 0.0) * mult for slot, mult in entries.items()))
    return tuple(scores)


def greedy_action(policy: LinearPolicy, x: HashedVector) -> int:
    """Argmax score, ties broken toward the lowest action index."""
    scores = score_actions(policy, x)
    return _argmax(scores)


def _argmax(scores: Sequence[float]) -> int:
    best = 0
    best_score = scores[0]
    for i in range(1, len(scores)):
        if scores[i] > best_score:
            best = i
            best_score = scores[i]
    return best


def select_action(policy: LinearPolicy, x: HashedVector, rng: Random) -> Prediction:
    """Epsilon-greedy selection with its exact probability.

    Consumes exactly two rng draws per call (one Bernoulli, one uniform
    index), whether or not the exploration branch is taken, so a seeded
    stream replays identically.
    """
    scores = score_actions(policy, x)
    greedy = _argmax(scores)
    k = policy.n_actions
    explore = rng.random() < policy.epsilon
    uniform_index = rng.randrange(k)
    chosen = uniform_index if explore else greedy
    epsilon = policy.epsilon
    if chosen == greedy:
        probability = (1.0 - epsilon) + epsilon / k
    else:
        probability = epsilon / k
    return Prediction(
        action=policy.actions[chosen],
        action_index=chosen,
        probability=probability,
        scores=scores,
        model_id=policy.model_id,
    )


def serialize_policy(policy: LinearPolicy) -> bytes:
    """Serialize to the versioned sparse JSON model format (UTF-8, one document).

    Weight entries are sorted by slot and zero weights are dropped, so
    re-serializing a deserialized policy is byte-identical.
    """
    weights = []
    for vector in policy.weights:
        row = []
        for slot in sorted(vector):
            w = vector[slot]
            if not math.isfinite(w):
                raise NonFiniteWeightError(f"non-finite weight at slot {slot}")
            if w != 0.0:
                row.append({"slot": slot, "w": w})
        weights.append(row)
    doc = {
        "magic": _MODEL_MAGIC,
        "version": _MODEL_VERSION,
        "modelId": policy.model_id,
        "epsilon": policy.epsilon,
        "hashBits": policy.hash_bits,
        "actions": list(policy.actions),
        "weights": weights,
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def deserialize_policy(data: bytes) -> LinearPolicy:
    """Parse and validate a serialized policy."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedModelError(f"unparseable model document: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedModelError("model document must be a JSON object")
    if doc.get("magic") != _MODEL_MAGIC:
        raise MalformedModelError(f"bad magic: {doc.get('magic')!r}")
    if doc.get("version") != _MODEL_VERSION:
        raise MalformedModelError(f"unsupported version: {doc.get('version')!r}")
    model_id = doc.get("modelId")
    epsilon = doc.get("epsilon")
    hash_bits = doc.get("hashBits")
    actions = doc.get("actions")
    weights = doc.get("weights")
    if (
        not isinstance(model_id, str)
        or not isinstance(epsilon, (int, float))
        or isinstance(epsilon, bool)
        or not isinstance(hash_bits, int)
        or isinstance(hash_bits, bool)
        or not isinstance(actions, list)
        or not all(isinstance(a, str) for a in actions)
        or not isinstance(weights, list)
    ):
        raise MalformedModelError("model fields have wrong types")
    if len(weights) != len(actions):
        raise MalformedModelError("one weight list per action required")
    parsed: list[dict[int, float]] = []
    for row in weights:
        if not isinstance(row, list):
            raise MalformedModelError("weights rows must be lists")
        vector: dict[int, float] = {}
        for entry in row:
            if (
                not isinstance(entry, dict)
                or set(entry) != {"slot", "w"}
                or not isinstance(entry["slot"], int)
                or isinstance(entry["slot"], bool)
                or not isinstance(entry["w"], (int, float))
                or isinstance(entry["w"], bool)
            ):
                raise MalformedModelError("weight entries must be {slot, w} objects")
            if entry["slot"] in vector:
                raise MalformedModelError(f"duplicate slot {entry['slot']}")
            if not math.isfinite(entry["w"]):
                raise NonFiniteWeightError(f"non-finite weight at slot {entry['slot']}")
            vector[entry["slot"]] = float(entry["w"])
        parsed.append(vector)
    try:
        return LinearPolicy(
            model_id=model_id,
            actions=tuple(actions),
            hash_bits=hash_bits,
            weights=tuple(parsed),
            epsilon=float(epsilon),
        )
    except NonFiniteWeightError:
        raise
    except ValueError as exc:
        raise MalformedModelError(str(exc)) from exc

"""Decision and reward logs: the training data of the inference-log-learn loop.

Decisions are captured at inference time ({context, action, probability}),
rewards arrive later keyed by event id, and :func:`join_logs` pairs them
into training examples. Files are line-oriented JSON, append-only, one
writer per file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .broker import FeatureKey, FeatureValue, ValueKind
from .errors import NonFiniteValueError, ZeroPropensityError
from .policy import Context

_KIND_TO_TAG = {
    ValueKind.BOOL: "bool",
    ValueKind.INT: "int",
    ValueKind.REAL: "real",
    ValueKind.CATEGORICAL: "cat",
}
_TAG_TO_KIND = {tag: kind for kind, tag in _KIND_TO_TAG.items()}


@dataclass(frozen=True)
class DecisionRecord:
    event_id: str
    timestamp_ms: int
    model_id: str
    context: Context
    action_index: int
    action_label: str
    probability: float


@dataclass(frozen=True)
class RewardRecord:
    event_id: str
    reward: float


@dataclass(frozen=True)
class JoinedExample:
    context: Context
    action_index: int
    probability: float
    reward: float
    reward_was_default: bool


@dataclass(frozen=True)
class JoinDiagnostics:
    """Anomaly counts from a join; never an error."""

    duplicate_rewards: int
    orphan_rewards: int
    defaults_used: int


@dataclass(frozen=True)
class JoinResult:
    examples: tuple[JoinedExample, ...]
    diagnostics: JoinDiagnostics


def context_to_json(context: Context) -> list[dict]:
    return [
        {
            "ns": key.namespace,
            "name": key.name,
            "kind": _KIND_TO_TAG[value.kind],
            "value": value.payload,
        }
        for key, value in context.features
    ]


def context_from_json(items: list[dict]) -> Context:
    pairs = []
    for item in items:
        kind = _TAG_TO_KIND[item["kind"]]
        raw = item["value"]
        if kind is ValueKind.BOOL:
            value = FeatureValue.boolean(raw)
        elif kind is ValueKind.INT:
            value = FeatureValue.integer(raw)
        elif kind is ValueKind.REAL:
            value = FeatureValue.real(raw)
        else:
            value = FeatureValue.categorical(raw)
        pairs.append((FeatureKey(item["ns"], item["name"]), value))
    return Context(tuple(pairs))


def decision_to_line(record: DecisionRecord) -> str:
    doc = {
        "eventId": record.event_id,
        "ts": record.timestamp_ms,
        "modelId": record.model_id,
        "context": context_to_json(record.context),
        "action": record.action_index,
        "label": record.action_label,
        "prob": record.probability,
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False)


def decision_from_line(line: str) -> DecisionRecord:
    doc = json.loads(line)
    return DecisionRecord(
        event_id=doc["eventId"],
        timestamp_ms=doc["ts"],
        model_id=doc["modelId"],
        context=context_from_json(doc["context"]),
        action_index=doc["action"],
        action_label=doc["label"],
        probability=doc["prob"],
    )


def reward_to_line(record: RewardRecord) -> str:
    return json.dumps(
        {"eventId": record.event_id, "reward": record.reward},
        separators=(",", ":"),
        ensure_ascii=False,
    )


def reward_from_line(line: str) -> RewardRecord:
    doc = json.loads(line)
    return RewardRecord(event_id=doc["eventId"], reward=doc["reward"])


class DecisionLogWriter:
    """Append-only JSONL writer for decisions. One writer per file."""

    def __init__(self, path: str | Path) -> None:
        self._file = open(path, "a", encoding="utf-8")

    def append(self, record: DecisionRecord) -> None:
        if record.probability <= 0.0:
            raise ZeroPropensityError(f"decision {record.event_id} has probability 0")
        self._file.write(decision_to_line(record) + "\n")
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "DecisionLogWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class RewardLogWriter:
    """Append-only JSONL writer for rewards. One writer per file."""

    def __init__(self, path: str | Path) -> None:
        self._file = open(path, "a", encoding="utf-8")

    def append(self, record: RewardRecord) -> None:
        if not math.isfinite(record.reward):
            raise NonFiniteValueError(f"reward for {record.event_id} is not finite")
        self._file.write(reward_to_line(record) + "\n")
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "RewardLogWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def write_decisions(path: str | Path, records: Iterable[DecisionRecord]) -> None:
    with DecisionLogWriter(path) as writer:
        for record in records:
            writer.append(record)


def write_rewards(path: str | Path, records: Iterable[RewardRecord]) -> None:
    with RewardLogWriter(path) as writer:
        for record in records:
            writer.append(record)


def read_decisions(path: str | Path) -> Iterator[DecisionRecord]:
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield decision_from_line(line)


def read_rewards(path: str | Path) -> Iterator[RewardRecord]:
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield reward_from_line(line)


def join_logs(
    decisions: Iterable[DecisionRecord],
    rewards: Iterable[RewardRecord],
    default_reward: float = 0.0,
) -> JoinResult:
    """Join rewards onto decisions by event id.

    Total over decisions: every decision yields exactly one example. A
    decision without a reward gets ``default_reward`` and is flagged; for
    duplicate rewards the first wins; rewards without a matching decision
    are counted and dropped.
    """
    decision_list = list(decisions)
    wanted = {record.event_id for record in decision_list}
    first_reward: dict[str, float] = {}
    duplicates = 0
    orphans = 0
    for reward in rewards:
        if reward.event_id not in wanted:
            orphans += 1
        elif reward.event_id in first_reward:
            duplicates += 1
        else:
            first_reward[reward.event_id] = reward.reward
    examples = []
    defaults_used = 0
    for record in decision_list:
        if record.event_id in first_reward:
            reward_value = first_reward[record.event_id]
            was_default = False
        else:
            reward_value = default_reward
            was_default = True
            defaults_used += 1
        examples.append(
            JoinedExample(
                context=record.context,
                action_index=record.action_index,
                probability=record.probability,
                reward=reward_value,
                reward_was_default=was_default,
            )
        )
    return JoinResult(
        examples=tuple(examples),
        diagnostics=JoinDiagnostics(
            duplicate_rewards=duplicates,
            orphan_rewards=orphans,
            defaults_used=defaults_used,
        ),
    )

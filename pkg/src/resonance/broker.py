"""Hierarchical feature broker.

Mediates between components that produce feature values and components that
consume model predictions. Producers feed typed input pipes; models are
associated with a node together with the feature keys they depend on;
consumers poll output pipes. Every model evaluation sees one coherent
snapshot of its dependencies, taken atomically with respect to publishes,
so a batch publish can never be observed half-applied.

Nodes form a tree. A node created by :meth:`BrokerNode.fork` resolves
feature keys against its own bindings first and then walks up through its
ancestors, so sub-components can add or shadow features without touching
the rest of the tree. Epochs are a single tree-global counter: every
committed publish (single or batch) gets a fresh epoch, which is what makes
snapshot coherence and output freshness well defined.

Thread safety: publishes and polls may run on any threads concurrently.
Each output pipe is single-consumer: poll one pipe from one thread at a
time. Topology changes (fork / bind / associate) may race with publishes
but must be externally serialized against each other on the same node.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence

from .errors import (
    ArityMismatchError,
    DuplicateBindingError,
    DuplicateOutputNameError,
    DuplicatePipeInBatchError,
    InvalidKeyError,
    KindMismatchError,
    NonFiniteValueError,
    UnknownOutputError,
)

_RESERVED_KEY_CHARS = ("|", "=")


class ValueKind(enum.Enum):
    BOOL = "bool"
    INT = "int"
    REAL = "real"
    CATEGORICAL = "cat"


@dataclass(frozen=True)
class FeatureKey:
    """Namespaced feature name. Reserved characters: '|' and '='."""

    namespace: str
    name: str

    def __post_init__(self) -> None:
        for part in (self.namespace, self.name):
            if not part:
                raise InvalidKeyError("feature key parts must be non-empty")
            if any(ch in part for ch in _RESERVED_KEY_CHARS):
                raise InvalidKeyError(f"reserved character in feature key part: {part!r}")

    def __str__(self) -> str:
        return f"{self.namespace}|{self.name}"


@dataclass(frozen=True)
class FeatureValue:
    """Tagged scalar carried through broker pipes."""

    kind: ValueKind
    payload: bool | int | float | str

    @classmethod
    def boolean(cls, value: bool) -> "FeatureValue":
        return cls(ValueKind.BOOL, bool(value))

    @classmethod
    def integer(cls, value: int) -> "FeatureValue":
        return cls(ValueKind.INT, int(value))

    @classmethod
    def real(cls, value: float) -> "FeatureValue":
        return cls(ValueKind.REAL, float(value))

    @classmethod
    def categorical(cls, token: str) -> "FeatureValue":
        return cls(ValueKind.CATEGORICAL, str(token))

    @property
    def numeric(self) -> float:
        """Numeric multiplier: 1.0 for bool/categorical, the value otherwise."""
        if self.kind in (ValueKind.INT, ValueKind.REAL):
            return float(self.payload)
        return 1.0


@dataclass(frozen=True)
class FeatureSnapshot:
    """Immutable view of feature values that were simultaneously current.

    ``values`` maps each resolved key to ``(value, last_updated_epoch)``.
    No value in the snapshot was superseded by a publish committed at or
    before ``epoch``.
    """

    epoch: int
    values: Mapping[FeatureKey, tuple[FeatureValue, int]]


class Model(Protocol):
    """Anything the broker can evaluate: declares an arity, maps values to a prediction."""

    input_arity: int

    def predict(self, values: Sequence[FeatureValue]) -> Any:
        ...


class _TreeState:
    """Tree-global lock and epoch counter, shared by every node of one tree."""

    def __init__(self) -> None:
        self.lock = threading.RLock()
        self.epoch = 0

    def next_epoch(self) -> int:
        self.epoch += 1
        return self.epoch


class InputPipe:
    """Write end for one feature on one node."""

    __slots__ = ("key", "kind", "node", "_value", "_epoch")

    def __init__(self, key: FeatureKey, kind: ValueKind, node: "BrokerNode") -> None:
        self.key = key
        self.kind = kind
        self.node = node
        self._value: FeatureValue | None = None
        self._epoch = 0

    def publish(self, value: FeatureValue) -> int:
        """Commit a value atomically, returning its epoch."""
        _check_publishable(self, value)
        state = self.node._state
        with state.lock:
            epoch = state.next_epoch()
            self._value = value
            self._epoch = epoch
        return epoch

    def __repr__(self) -> str:
        return f"InputPipe({self.key}, {self.kind.value})"


def _check_publishable(pipe: InputPipe, value: FeatureValue) -> None:
    if value.kind is not pipe.kind:
        raise KindMismatchError(
            f"pipe {pipe.key} expects {pipe.kind.value}, got {value.kind.value}"
        )
    if value.kind is ValueKind.REAL and not math.isfinite(value.payload):
        raise NonFiniteValueError(f"non-finite value for {pipe.key}")


@dataclass
class ModelAssociation:
    """Handle for one registered model; also the target of :meth:`swap_model`.

    Dependency keys resolve against the association's node at every poll,
    so a later shadowing bind on the path to the root takes effect
    immediately (resolution is a pure function of the current tree).
    """

    node: "BrokerNode"
    output_name: str
    keys: tuple[FeatureKey, ...]
    model: Model
    version: int = 1

    def swap_model(self, new_model: Model) -> None:
        """Atomically replace the model. The next poll on any bound output is fresh."""
        if new_model.input_arity != len(self.keys):
            raise ArityMismatchError(
                f"model expects {new_model.input_arity} inputs, association has {len(self.keys)}"
            )
        state = self.node._state
        with state.lock:
            self.model = new_model
            self.version += 1


@dataclass(frozen=True)
class Fresh:
    """A new prediction, evaluated on exactly one coherent snapshot."""

    prediction: Any
    snapshot: FeatureSnapshot


@dataclass(frozen=True)
class Unchanged:
    """No dependency changed and the model was not swapped since the last poll."""


@dataclass(frozen=True)
class NotReady:
    """Some dependencies have never been published."""

    missing: tuple[FeatureKey, ...]


class OutputPipe:
    """Read end for one associated output. Single consumer per pipe."""

    __slots__ = ("association", "last_consumed_epoch", "_last_consumed_version")

    def __init__(self, association: ModelAssociation) -> None:
        self.association = association
        self.last_consumed_epoch = 0
        self._last_consumed_version = 0

    def poll(self) -> Fresh | Unchanged | NotReady:
        """Return a fresh prediction iff a dependency changed or the model was swapped.

        Not ready while any dependency has never been published; never
        substitutes defaults for missing features.
        """
        assoc = self.association
        state = assoc.node._state
        with state.lock:
            model = assoc.model
            version = assoc.version
            missing: list[FeatureKey] = []
            resolved: list[tuple[FeatureKey, FeatureValue, int]] = []
            for key in assoc.keys:
                pipe = resolve_binding(assoc.node, key)
                if pipe is None or pipe._value is None:
                    missing.append(key)
                else:
                    resolved.append((key, pipe._value, pipe._epoch))
            if missing:
                return NotReady(tuple(missing))
            snapshot_epoch = state.epoch

        max_updated = max((epoch for _, _, epoch in resolved), default=0)
        if max_updated <= self.last_consumed_epoch and version == self._last_consumed_version:
            return Unchanged()

        snapshot = FeatureSnapshot(
            epoch=snapshot_epoch,
            values={key: (value, epoch) for key, value, epoch in resolved},
        )
        # Evaluate outside the lock: the snapshot is immutable and the model
        # reference was captured with it, so a concurrent swap cannot blend.
        prediction = model.predict([value for _, value, _ in resolved])
        self.last_consumed_epoch = snapshot_epoch
        self._last_consumed_version = version
        return Fresh(prediction, snapshot)


class BrokerNode:
    """One node of a broker tree. Create the root with ``BrokerNode()``."""

    def __init__(self, parent: "BrokerNode | None" = None) -> None:
        self.parent = parent
        self._state = parent._state if parent is not None else _TreeState()
        self._inputs: dict[FeatureKey, InputPipe] = {}
        self._associations: dict[str, ModelAssociation] = {}
        self.children: list[BrokerNode] = []

    def fork(self) -> "BrokerNode":
        """Create a child node that inherits ancestor bindings and may shadow them."""
        child = BrokerNode(parent=self)
        with self._state.lock:
            self.children.append(child)
        return child

    def bind_input(self, key: FeatureKey, kind: ValueKind) -> InputPipe:
        """Bind a typed input pipe for ``key`` on this node.

        Shadowing an ancestor's binding is allowed; rebinding the same key
        on the same node is not.
        """
        if key in self._inputs:
            raise DuplicateBindingError(f"{key} already bound on this node")
        pipe = InputPipe(key, kind, self)
        with self._state.lock:
            self._inputs[key] = pipe
        return pipe

    def publish_batch(self, pairs: Sequence[tuple[InputPipe, FeatureValue]]) -> int:
        """Commit all pairs at a single epoch; no snapshot can observe a subset.

        An empty batch is a no-op returning the current epoch. All pipes
        must belong to this node's tree.
        """
        seen: set[int] = set()
        for pipe, value in pairs:
            if id(pipe) in seen:
                raise DuplicatePipeInBatchError(f"pipe {pipe.key} listed twice in batch")
            seen.add(id(pipe))
            if pipe.node._state is not self._state:
                raise ValueError(f"pipe {pipe.key} belongs to a different broker tree")
            _check_publishable(pipe, value)
        with self._state.lock:
            if not pairs:
                return self._state.epoch
            epoch = self._state.next_epoch()
            for pipe, value in pairs:
                pipe._value = value
                pipe._epoch = epoch
        return epoch

    def associate_model(
        self,
        model: Model,
        inputs: Sequence[FeatureKey],
        output_name: str,
    ) -> ModelAssociation:
        """Register a model that transforms the given inputs into ``output_name``."""
        if output_name in self._associations:
            raise DuplicateOutputNameError(f"output {output_name!r} already associated")
        if model.input_arity != len(inputs):
            raise ArityMismatchError(
                f"model expects {model.input_arity} inputs, got {len(inputs)}"
            )
        assoc = ModelAssociation(
            node=self, output_name=output_name, keys=tuple(inputs), model=model
        )
        with self._state.lock:
            self._associations[output_name] = assoc
        return assoc

    def bind_output(self, output_name: str) -> OutputPipe:
        """Bind a consumer pipe for an output associated on this node or an ancestor."""
        node: BrokerNode | None = self
        while node is not None:
            assoc = node._associations.get(output_name)
            if assoc is not None:
                return OutputPipe(assoc)
            node = node.parent
        raise UnknownOutputError(output_name)

    @property
    def current_epoch(self) -> int:
        return self._state.epoch


def resolve_binding(node: BrokerNode, key: FeatureKey) -> InputPipe | None:
    """First input pipe for ``key`` found walking from ``node`` to the root."""
    current: BrokerNode | None = node
    while current is not None:
        pipe = current._inputs.get(key)
        if pipe is not None:
            return pipe
        current = current.parent
    return None

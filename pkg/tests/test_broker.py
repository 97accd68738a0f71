import threading
import time
from random import Random

import pytest

from resonance.broker import (
    BrokerNode,
    FeatureKey,
    FeatureValue,
    Fresh,
    NotReady,
    Unchanged,
    ValueKind,
    resolve_binding,
)
from resonance.errors import (
    ArityMismatchError,
    DuplicateBindingError,
    DuplicateOutputNameError,
    DuplicatePipeInBatchError,
    InvalidKeyError,
    KindMismatchError,
    NonFiniteValueError,
    UnknownOutputError,
)


class TupleModel:
    """Test model: echoes its input payloads, optionally tagged."""

    def __init__(self, arity, tag="t"):
        self.input_arity = arity
        self.tag = tag

    def predict(self, values):
        return (self.tag, tuple(v.payload for v in values))


def key(ns, name):
    return FeatureKey(ns, name)


def cat(token):
    return FeatureValue.categorical(token)


class TestBindAndPublish:
    def test_publish_visible_to_model(self):
        root = BrokerNode()
        pipe = root.bind_input(key("call", "nwType"), ValueKind.CATEGORICAL)
        root.associate_model(TupleModel(1), [key("call", "nwType")], "out")
        out = root.bind_output("out")
        pipe.publish(cat("wifi"))
        result = out.poll()
        assert isinstance(result, Fresh)
        assert result.prediction == ("t", ("wifi",))

    def test_duplicate_binding_rejected(self):
        root = BrokerNode()
        root.bind_input(key("call", "nwType"), ValueKind.CATEGORICAL)
        with pytest.raises(DuplicateBindingError):
            root.bind_input(key("call", "nwType"), ValueKind.CATEGORICAL)

    def test_shadowing_same_key_on_child_allowed(self):
        root = BrokerNode()
        root.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        child = root.fork()
        child_pipe = child.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        assert resolve_binding(child, key("call", "platform")) is child_pipe

    @pytest.mark.parametrize("ns,name", [("", "x"), ("a|b", "x"), ("a", "x=y"), ("a", "")])
    def test_reserved_or_empty_key_parts_rejected(self, ns, name):
        with pytest.raises(InvalidKeyError):
            FeatureKey(ns, name)

    def test_kind_mismatch(self):
        root = BrokerNode()
        pipe = root.bind_input(key("call", "nwType"), ValueKind.CATEGORICAL)
        with pytest.raises(KindMismatchError):
            pipe.publish(FeatureValue.real(1.0))

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_real_rejected(self, bad):
        root = BrokerNode()
        pipe = root.bind_input(key("a", "x"), ValueKind.REAL)
        with pytest.raises(NonFiniteValueError):
            pipe.publish(FeatureValue(ValueKind.REAL, bad))

    def test_sequential_publishes_strictly_increase_epochs(self):
        root = BrokerNode()
        pipe = root.bind_input(key("a", "x"), ValueKind.INT)
        epochs = [pipe.publish(FeatureValue.integer(i)) for i in range(10)]
        assert epochs == sorted(epochs)
        assert len(set(epochs)) == len(epochs)


class TestPublishBatch:
    def test_batch_commits_at_one_epoch(self):
        root = BrokerNode()
        a = root.bind_input(key("s", "a"), ValueKind.INT)
        b = root.bind_input(key("s", "b"), ValueKind.INT)
        e = root.publish_batch([(a, FeatureValue.integer(0)), (b, FeatureValue.integer(0))])
        assert a._epoch == b._epoch == e

    def test_no_poll_observes_partial_batch(self):
        root = BrokerNode()
        a = root.bind_input(key("s", "a"), ValueKind.INT)
        b = root.bind_input(key("s", "b"), ValueKind.INT)
        root.associate_model(TupleModel(2), [key("s", "a"), key("s", "b")], "pair")
        out = root.bind_output("pair")
        for flip in range(50):
            v = FeatureValue.integer(flip % 2)
            root.publish_batch([(a, v), (b, v)])
            result = out.poll()
            assert isinstance(result, Fresh)
            left, right = result.prediction[1]
            assert left == right

    def test_empty_batch_is_noop(self):
        root = BrokerNode()
        pipe = root.bind_input(key("s", "a"), ValueKind.INT)
        pipe.publish(FeatureValue.integer(1))
        before = root.current_epoch
        assert root.publish_batch([]) == before
        assert root.current_epoch == before

    def test_duplicate_pipe_in_batch(self):
        root = BrokerNode()
        pipe = root.bind_input(key("s", "a"), ValueKind.INT)
        with pytest.raises(DuplicatePipeInBatchError):
            root.publish_batch(
                [(pipe, FeatureValue.integer(0)), (pipe, FeatureValue.integer(1))]
            )


class TestAssociateAndOutputs:
    def test_three_feature_inference(self):
        root = BrokerNode()
        audio = root.fork()
        nw = root.bind_input(key("call", "nwType"), ValueKind.CATEGORICAL)
        plat = root.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        ct = audio.bind_input(key("call", "callType"), ValueKind.CATEGORICAL)
        audio.associate_model(
            TupleModel(3),
            [key("call", "nwType"), key("call", "platform"), key("call", "callType")],
            "jbHysteresis",
        )
        out = audio.bind_output("jbHysteresis")
        nw.publish(cat("wifi"))
        plat.publish(cat("mobile"))
        ct.publish(cat("audio"))
        result = out.poll()
        assert result.prediction == ("t", ("wifi", "mobile", "audio"))

    def test_duplicate_output_name(self):
        root = BrokerNode()
        root.associate_model(TupleModel(0), [], "out")
        with pytest.raises(DuplicateOutputNameError):
            root.associate_model(TupleModel(0), [], "out")

    def test_arity_mismatch(self):
        root = BrokerNode()
        with pytest.raises(ArityMismatchError):
            root.associate_model(TupleModel(2), [key("a", "x")], "out")

    def test_sibling_models_share_root_pipe(self):
        root = BrokerNode()
        plat = root.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        left, right = root.fork(), root.fork()
        left.associate_model(TupleModel(1), [key("call", "platform")], "l")
        right.associate_model(TupleModel(1), [key("call", "platform")], "r")
        plat.publish(cat("desktop"))
        assert left.bind_output("l").poll().prediction == ("t", ("desktop",))
        assert right.bind_output("r").poll().prediction == ("t", ("desktop",))
        assert resolve_binding(left, key("call", "platform")) is plat
        assert resolve_binding(right, key("call", "platform")) is plat

    def test_unknown_output(self):
        root = BrokerNode()
        with pytest.raises(UnknownOutputError):
            root.bind_output("nope")

    def test_bind_output_walks_up_to_ancestor_association(self):
        # Three-level tree; association lives at the top, output bound at the bottom.
        root = BrokerNode()
        mid = root.fork()
        leaf = mid.fork()
        pipe = root.bind_input(key("a", "x"), ValueKind.INT)
        root.associate_model(TupleModel(1), [key("a", "x")], "out")
        out = leaf.bind_output("out")
        pipe.publish(FeatureValue.integer(5))
        assert out.poll().prediction == ("t", (5,))
        # Walk-up oracle: leaf -> mid -> root, association found on root.
        assert out.association.node is root


class TestPoll:
    def test_not_ready_lists_missing_keys(self):
        root = BrokerNode()
        root.bind_input(key("call", "callType"), ValueKind.CATEGORICAL)
        root.associate_model(TupleModel(1), [key("call", "callType")], "out")
        out = root.bind_output("out")
        result = out.poll()
        assert result == NotReady((key("call", "callType"),))

    def test_unbound_key_is_missing(self):
        root = BrokerNode()
        root.associate_model(TupleModel(1), [key("call", "callType")], "out")
        out = root.bind_output("out")
        assert out.poll() == NotReady((key("call", "callType"),))

    def test_fresh_then_unchanged(self):
        root = BrokerNode()
        pipe = root.bind_input(key("a", "x"), ValueKind.INT)
        root.associate_model(TupleModel(1), [key("a", "x")], "out")
        out = root.bind_output("out")
        pipe.publish(FeatureValue.integer(1))
        assert isinstance(out.poll(), Fresh)
        assert isinstance(out.poll(), Unchanged)

    def test_midcall_change_recomputes(self):
        root = BrokerNode()
        pipe = root.bind_input(key("call", "nwType"), ValueKind.CATEGORICAL)
        root.associate_model(TupleModel(1), [key("call", "nwType")], "out")
        out = root.bind_output("out")
        pipe.publish(cat("wifi"))
        assert out.poll().prediction == ("t", ("wifi",))
        pipe.publish(cat("cellular"))
        result = out.poll()
        assert isinstance(result, Fresh)
        assert result.prediction == ("t", ("cellular",))

    def test_zero_dependency_model_fresh_once_then_on_swap(self):
        # First poll evaluates (the model version counts as a change), then
        # the output settles until the model is swapped.
        root = BrokerNode()
        assoc = root.associate_model(TupleModel(0), [], "const")
        out = root.bind_output("const")
        first = out.poll()
        assert isinstance(first, Fresh)
        assert first.prediction == ("t", ())
        assert isinstance(out.poll(), Unchanged)
        assoc.swap_model(TupleModel(0, tag="v2"))
        assert out.poll().prediction == ("v2", ())

    def test_unrelated_publish_leaves_output_unchanged(self):
        root = BrokerNode()
        a = root.bind_input(key("s", "a"), ValueKind.INT)
        b = root.bind_input(key("s", "b"), ValueKind.INT)
        root.associate_model(TupleModel(1), [key("s", "a")], "out")
        out = root.bind_output("out")
        a.publish(FeatureValue.integer(1))
        assert isinstance(out.poll(), Fresh)
        b.publish(FeatureValue.integer(7))
        assert isinstance(out.poll(), Unchanged)


class TestFork:
    def test_child_inherits_root_binding(self):
        root = BrokerNode()
        plat = root.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        child = root.fork()
        child.associate_model(TupleModel(1), [key("call", "platform")], "out")
        out = child.bind_output("out")
        plat.publish(cat("desktop"))
        assert out.poll().prediction == ("t", ("desktop",))

    def test_child_local_binding_invisible_to_parent(self):
        root = BrokerNode()
        child = root.fork()
        child.bind_input(key("call", "callType"), ValueKind.CATEGORICAL)
        assert resolve_binding(root, key("call", "callType")) is None

    def test_three_subcomponents_share_and_localize(self):
        root = BrokerNode()
        plat = root.bind_input(key("sys", "platform"), ValueKind.CATEGORICAL)
        nw = root.bind_input(key("sys", "nwType"), ValueKind.CATEGORICAL)
        children = [root.fork() for _ in range(3)]
        locals_ = []
        for i, child in enumerate(children):
            local = child.bind_input(key("local", f"f{i}"), ValueKind.INT)
            child.associate_model(
                TupleModel(3),
                [key("sys", "platform"), key("sys", "nwType"), key("local", f"f{i}")],
                f"out{i}",
            )
            locals_.append(local)
        plat.publish(cat("mobile"))
        nw.publish(cat("wifi"))
        for i, child in enumerate(children):
            locals_[i].publish(FeatureValue.integer(i))
            out = child.bind_output(f"out{i}")
            assert out.poll().prediction == ("t", ("mobile", "wifi", i))

    def test_shadow_after_associate_re_resolves(self):
        root = BrokerNode()
        plat = root.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        child = root.fork()
        child.associate_model(TupleModel(1), [key("call", "platform")], "out")
        out = child.bind_output("out")
        plat.publish(cat("desktop"))
        assert out.poll().prediction == ("t", ("desktop",))
        # A shadowing bind after association redirects resolution; the new
        # pipe has no value yet, so the output is not ready rather than stale.
        local = child.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        assert out.poll() == NotReady((key("call", "platform"),))
        local.publish(cat("tablet"))
        assert out.poll().prediction == ("t", ("tablet",))

    def test_parent_isolated_from_child_activity(self):
        root = BrokerNode()
        plat = root.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        root.associate_model(TupleModel(1), [key("call", "platform")], "out")
        out = root.bind_output("out")
        plat.publish(cat("desktop"))
        assert isinstance(out.poll(), Fresh)
        child = root.fork()
        shadow = child.bind_input(key("call", "platform"), ValueKind.CATEGORICAL)
        shadow.publish(cat("mobile"))
        # Parent model still resolves root's pipe and sees nothing new.
        assert resolve_binding(root, key("call", "platform")) is plat
        assert isinstance(out.poll(), Unchanged)


class TestSwap:
    def _setup(self):
        root = BrokerNode()
        pipe = root.bind_input(key("a", "x"), ValueKind.INT)
        assoc = root.associate_model(TupleModel(1, tag="old"), [key("a", "x")], "out")
        out = root.bind_output("out")
        pipe.publish(FeatureValue.integer(1))
        return root, pipe, assoc, out

    def test_swap_makes_next_poll_fresh(self):
        _, _, assoc, out = self._setup()
        assert out.poll().prediction[0] == "old"
        assert isinstance(out.poll(), Unchanged)
        assoc.swap_model(TupleModel(1, tag="new"))
        result = out.poll()
        assert isinstance(result, Fresh)
        assert result.prediction[0] == "new"

    def test_swap_arity_mismatch(self):
        _, _, assoc, _ = self._setup()
        with pytest.raises(ArityMismatchError):
            assoc.swap_model(TupleModel(2))

    def test_concurrent_swaps_never_blend(self):
        root = BrokerNode()
        pipe = root.bind_input(key("a", "x"), ValueKind.INT)

        class Plus:
            input_arity = 1

            def __init__(self, offset):
                self.offset = offset

            def predict(self, values):
                return values[0].payload + self.offset

        assoc = root.associate_model(Plus(0), [key("a", "x")], "out")
        out = root.bind_output("out")
        stop = threading.Event()

        def churn():
            toggle = 0
            while not stop.is_set():
                toggle ^= 1
                assoc.swap_model(Plus(1000 * toggle))

        worker = threading.Thread(target=churn)
        worker.start()
        try:
            rng = Random(5)
            for _ in range(2000):
                value = rng.randrange(100)
                pipe.publish(FeatureValue.integer(value))
                result = out.poll()
                if isinstance(result, Fresh):
                    observed = result.snapshot.values[key("a", "x")][0].payload
                    # Exactly the old or the new model, applied to the snapshot.
                    assert result.prediction in (observed, observed + 1000)
        finally:
            stop.set()
            worker.join()


class TestMonotoneEpochs:
    def test_per_thread_commit_epochs_increase(self):
        root = BrokerNode()
        pipes = [root.bind_input(key("s", f"f{i}"), ValueKind.INT) for i in range(4)]
        seen = {}

        def publisher(thread_id):
            epochs = []
            for i in range(500):
                epochs.append(pipes[thread_id].publish(FeatureValue.integer(i)))
            seen[thread_id] = epochs

        threads = [threading.Thread(target=publisher, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for epochs in seen.values():
            assert all(a < b for a, b in zip(epochs, epochs[1:]))
        # Global uniqueness across threads as well: one commit per epoch.
        merged = [e for epochs in seen.values() for e in epochs]
        assert len(set(merged)) == len(merged)


class _FreshnessReference:
    """Independent simulation of the freshness rule for scripted schedules."""

    def __init__(self, dep_names):
        self.dep_names = set(dep_names)
        self.epoch = 0
        self.last_updated = {}
        self.version = 1
        self.last_consumed_epoch = 0
        self.last_consumed_version = 0

    def publish(self, names):
        self.epoch += 1
        for name in names:
            self.last_updated[name] = self.epoch

    def swap(self):
        self.version += 1

    def poll(self):
        missing = self.dep_names - set(self.last_updated)
        if missing:
            return "not_ready"
        newest = max(self.last_updated[n] for n in self.dep_names)
        if newest <= self.last_consumed_epoch and self.version == self.last_consumed_version:
            return "unchanged"
        self.last_consumed_epoch = self.epoch
        self.last_consumed_version = self.version
        return "fresh"


def test_freshness_matches_reference_on_scripted_schedule():
    rng = Random(20240811)
    names = ["a", "b", "c"]
    root = BrokerNode()
    pipes = {n: root.bind_input(key("s", n), ValueKind.INT) for n in names}
    assoc = root.associate_model(
        TupleModel(2), [key("s", "a"), key("s", "b")], "out"
    )
    out = root.bind_output("out")
    reference = _FreshnessReference(["a", "b"])

    for step in range(400):
        op = rng.random()
        if op < 0.35:
            name = rng.choice(names)
            pipes[name].publish(FeatureValue.integer(step))
            reference.publish([name])
        elif op < 0.5:
            chosen = rng.sample(names, rng.randrange(1, 4))
            root.publish_batch([(pipes[n], FeatureValue.integer(step)) for n in chosen])
            reference.publish(chosen)
        elif op < 0.58:
            assoc.swap_model(TupleModel(2))
            reference.swap()
        else:
            result = out.poll()
            status = {Fresh: "fresh", Unchanged: "unchanged", NotReady: "not_ready"}[
                type(result)
            ]
            assert status == reference.poll(), f"diverged at step {step}"


def test_coherence_under_concurrent_batch_publisher():
    # Smoke version of the stress gate: correlated pair flips, no mixed reads.
    # The poller sleeps briefly every few polls, like a consumer ticking on
    # its own cadence; the publisher flips as fast as it can in between.
    root = BrokerNode()
    a = root.bind_input(key("s", "a"), ValueKind.INT)
    b = root.bind_input(key("s", "b"), ValueKind.INT)
    root.associate_model(TupleModel(2), [key("s", "a"), key("s", "b")], "pair")
    out = root.bind_output("pair")
    stop = threading.Event()

    def publisher():
        flip = 0
        while not stop.is_set():
            flip ^= 1
            v = FeatureValue.integer(flip)
            root.publish_batch([(a, v), (b, v)])

    worker = threading.Thread(target=publisher)
    worker.start()
    try:
        observed = 0
        for i in range(10000):
            result = out.poll()
            if isinstance(result, Fresh):
                left, right = result.prediction[1]
                assert left == right
                observed += 1
            if i % 50 == 0:
                time.sleep(0.0001)
        assert observed > 100
    finally:
        stop.set()
        worker.join()

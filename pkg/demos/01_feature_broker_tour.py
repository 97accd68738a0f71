"""Tour of the feature broker: pipes, models, snapshots, forks, swaps.

The broker sits between components that produce feature values and
components that consume predictions, so neither has to know about the
other's API surface or threading.
"""

from resonance import (
    BrokerNode,
    FeatureKey,
    FeatureValue,
    Fresh,
    NotReady,
    Unchanged,
    ValueKind,
)


class JitterBufferModel:
    """Toy stand-in for a real inference model: any callable shape works."""

    input_arity = 3

    def predict(self, values):
        nw_type, platform, call_type = (v.payload for v in values)
        base = 40 if platform == "mobile" else 20
        if nw_type in ("3g", "4g"):
            base += 15
        if call_type == "video":
            base += 5
        return base


def main():
    print("== binding inputs on a broker tree ==")
    root = BrokerNode()
    nw_pipe = root.bind_input(FeatureKey("system", "nwType"), ValueKind.CATEGORICAL)
    platform_pipe = root.bind_input(FeatureKey("system", "platform"), ValueKind.CATEGORICAL)

    # The audio component forks its own node: it sees the system features
    # plus anything it binds locally, and the parent is unaffected.
    audio = root.fork()
    call_type_pipe = audio.bind_input(FeatureKey("audio", "callType"), ValueKind.CATEGORICAL)

    assoc = audio.associate_model(
        JitterBufferModel(),
        [
            FeatureKey("system", "nwType"),
            FeatureKey("system", "platform"),
            FeatureKey("audio", "callType"),
        ],
        "jbHysteresis",
    )
    out = audio.bind_output("jbHysteresis")

    print("poll before any values:", out.poll())
    assert isinstance(out.poll(), NotReady)

    print("\n== publishing and polling ==")
    platform_pipe.publish(FeatureValue.categorical("mobile"))
    nw_pipe.publish(FeatureValue.categorical("wifi"))
    call_type_pipe.publish(FeatureValue.categorical("audio"))
    result = out.poll()
    assert isinstance(result, Fresh)
    print("first prediction:", result.prediction)
    print("snapshot epoch:", result.snapshot.epoch)
    print("poll again with nothing new:", out.poll())
    assert isinstance(out.poll(), Unchanged)

    print("\n== mid-call network change ==")
    nw_pipe.publish(FeatureValue.categorical("4g"))
    result = out.poll()
    print("recomputed prediction:", result.prediction)

    print("\n== batch publish keeps correlated values coherent ==")
    epoch = root.publish_batch(
        [
            (nw_pipe, FeatureValue.categorical("wired")),
            (platform_pipe, FeatureValue.categorical("desktop")),
        ]
    )
    print(f"both committed at epoch {epoch}; a poll can never see only one of them")
    print("prediction:", out.poll().prediction)

    print("\n== swapping the model in place ==")

    class Flat:
        input_arity = 3

        def predict(self, values):
            return 25

    assoc.swap_model(Flat())
    result = out.poll()
    print("after swap (no feature changed, still fresh):", result.prediction)


if __name__ == "__main__":
    main()

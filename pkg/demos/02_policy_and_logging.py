"""Hashed linear policies, epsilon-greedy selection, and decision logging.

Shows how a context becomes a sparse hashed vector, how selection reports
its exact propensity, and how decisions and rewards land in JSONL logs
that can be joined into training examples later.
"""

import tempfile
from pathlib import Path
from random import Random

from resonance import (
    Context,
    DecisionRecord,
    FeatureKey,
    FeatureValue,
    RewardRecord,
    deserialize_policy,
    encode_context,
    join_logs,
    score_actions,
    select_action,
    serialize_policy,
    write_decisions,
    write_rewards,
    zero_policy,
)
from resonance.policy import LinearPolicy


def main():
    context = Context(
        (
            (FeatureKey("system", "nwType"), FeatureValue.categorical("wifi")),
            (FeatureKey("system", "platform"), FeatureValue.categorical("mobile")),
            (FeatureKey("call", "rttMs"), FeatureValue.real(85.0)),
        )
    )
    x = encode_context(context, hash_bits=10)
    print("hashed vector slots:", dict(sorted(x.entries.items())))

    policy = LinearPolicy(
        model_id="demo-policy",
        actions=("threshold-0", "threshold-1", "threshold-2"),
        hash_bits=10,
        weights=({}, {208: 0.4}, {208: 0.1}),  # 208 is the bias slot at 10 bits
        epsilon=0.2,
    )
    print("scores:", score_actions(policy, x))

    rng = Random(7)
    print("\nten epsilon-greedy selections (action, propensity):")
    decisions = []
    rewards = []
    for i in range(10):
        pred = select_action(policy, x, rng)
        print(f"  {pred.action}  p={pred.probability:.2f}")
        decisions.append(
            DecisionRecord(
                event_id=f"demo-{i}",
                timestamp_ms=i,
                model_id=pred.model_id,
                context=context,
                action_index=pred.action_index,
                action_label=pred.action,
                probability=pred.probability,
            )
        )
        rewards.append(RewardRecord(f"demo-{i}", 1.0 if pred.action_index == 1 else 0.3))

    with tempfile.TemporaryDirectory() as tmp:
        dpath = Path(tmp) / "decisions.jsonl"
        rpath = Path(tmp) / "rewards.jsonl"
        write_decisions(dpath, decisions)
        write_rewards(rpath, rewards[:-2])  # pretend two rewards never arrived
        print("\nfirst decision line on disk:")
        print(" ", dpath.read_text().splitlines()[0])

        from resonance import read_decisions, read_rewards

        result = join_logs(read_decisions(dpath), read_rewards(rpath), default_reward=0.0)
        defaults = sum(ex.reward_was_default for ex in result.examples)
        print(f"\njoined {len(result.examples)} examples, {defaults} used the default reward")
        print("diagnostics:", result.diagnostics)

    blob = serialize_policy(policy)
    print(f"\nserialized policy: {len(blob)} bytes")
    assert deserialize_policy(blob) == policy
    print("round trip is exact")


if __name__ == "__main__":
    main()

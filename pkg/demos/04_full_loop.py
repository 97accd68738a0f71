"""The whole loop: broker-fed inference, logging, retraining, model swaps.

Runs one scenario end to end, prints how the learned policy's regret falls
as models are retrained and swapped on cadence, then runs a small
control-vs-treatment comparison with a Welch's t-test.
"""

from resonance import (
    LoopConfig,
    best_fixed_action,
    build_scenario,
    compare_arms,
    run_loop,
    true_value,
)


def main():
    spec = build_scenario("network_reconnect", seed=42)
    cfg = LoopConfig(rounds=20000, model_update_interval=4000, seed=5)
    result = run_loop(spec, cfg)

    print(f"{spec.name}: {cfg.rounds} rounds, retrain every {cfg.model_update_interval}")
    print("\nmean regret by model version (lower is better):")
    by_version = {}
    for step in result.steps:
        by_version.setdefault(step.model_version, []).append(
            1.0 - spec.mean_reward(step.context_index, step.action_index)
        )
    for version, regrets in sorted(by_version.items()):
        bar = "#" * int(60 * sum(regrets) / len(regrets))
        print(f"  v{version}: {sum(regrets)/len(regrets):.3f} {bar}")

    fixed = best_fixed_action(spec)
    print(f"\ntrue values: best fixed {true_value(spec, fixed):.3f}")
    for i, policy in enumerate(result.policies):
        print(f"  policy v{i}: {true_value(spec, policy):.3f}")

    print("\nsmall paired comparison (4 replications, shortened loop):")
    report = compare_arms(
        spec, fixed, LoopConfig(rounds=10000, model_update_interval=2500, seed=1),
        replications=4,
    )
    print(f"  control  : {report.mean_reward_control:.4f}")
    print(f"  treatment: {report.mean_reward_treatment:.4f}")
    print(f"  lift     : {report.lift_percent:+.2f}%  (p = {report.p_value:.2e})")


if __name__ == "__main__":
    main()

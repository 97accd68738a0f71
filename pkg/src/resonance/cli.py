"""Command-line front door: simulate, train, eval, predict.

Every command is a pure function of its arguments and input files given a
seed: repeated invocations write byte-identical outputs. Exit codes: 0 on
success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from random import Random

from .errors import ConfigError, ResonanceError, UnknownScenarioError
from .learning import TrainConfig, ips_value, make_fixed_policy, train_policy
from .logs import context_from_json, join_logs, read_decisions, read_rewards
from .policy import (
    DEFAULT_EPSILON,
    DEFAULT_HASH_BITS,
    deserialize_policy,
    encode_context,
    select_action,
    serialize_policy,
)
from .sim import (
    SCENARIO_NAMES,
    LoopConfig,
    _replication_seed,
    best_fixed_action,
    build_scenario,
    compare_arms,
    run_loop,
    write_report_json,
    write_rounds_csv,
)

_USAGE_EXIT = 2
_RUNTIME_EXIT = 1


def _normalize_scenario(raw: str) -> str:
    name = raw.replace("-", "_")
    if name not in SCENARIO_NAMES:
        raise _UsageError(f"unknown scenario: {raw}")
    return name


class _UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resonance",
        description="Contextual-bandit replacement for fixed application constants.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser(
        "simulate", help="compare a fixed-constant control against the learned policy"
    )
    simulate.add_argument("--scenario", required=True)
    simulate.add_argument("--rounds", type=int, default=LoopConfig.rounds)
    simulate.add_argument("--epsilon", type=float, default=LoopConfig.epsilon)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument(
        "--model-update-interval", type=int, default=LoopConfig.model_update_interval
    )
    simulate.add_argument("--replications", type=int, default=20)
    simulate.add_argument("--out", required=True, help="report JSON path")

    train = sub.add_parser("train", help="train a policy from decision/reward logs")
    train.add_argument("--decisions", required=True)
    train.add_argument("--rewards", required=True)
    train.add_argument("--out", required=True, help="model JSON path")
    train.add_argument("--hash-bits", type=int, default=DEFAULT_HASH_BITS)
    train.add_argument("--epsilon-out", type=float, default=DEFAULT_EPSILON)
    train.add_argument("--seed", type=int, default=0)

    evaluate = sub.add_parser("eval", help="IPS off-policy evaluation on logs")
    evaluate.add_argument("--decisions", required=True)
    evaluate.add_argument("--rewards", required=True)
    evaluate.add_argument("--policy", help="policy JSON path")
    evaluate.add_argument(
        "--fixed-action",
        nargs=2,
        type=int,
        metavar=("K", "IDX"),
        help="evaluate the fixed policy playing IDX out of K actions",
    )

    predict = sub.add_parser("predict", help="one prediction from a stored model")
    predict.add_argument("--model", required=True)
    predict.add_argument("--context", required=True, help="inline context JSON")
    predict.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_simulate(args: argparse.Namespace) -> int:
    name = _normalize_scenario(args.scenario)
    if args.replications < 2:
        raise _UsageError("replications must be at least 2")
    cfg = LoopConfig(
        rounds=args.rounds,
        epsilon=args.epsilon,
        model_update_interval=args.model_update_interval,
        seed=args.seed,
    )
    spec = build_scenario(name, args.seed)
    control = best_fixed_action(spec)
    report = compare_arms(spec, control, cfg, args.replications)

    out_path = Path(args.out)
    write_report_json(report, out_path)
    # Per-round trace of the first treatment replication, alongside the report.
    trace = run_loop(spec, LoopConfig(
        rounds=cfg.rounds,
        epsilon=cfg.epsilon,
        model_update_interval=cfg.model_update_interval,
        seed=_replication_seed(cfg.seed, 0),
    ))
    csv_path = out_path.with_suffix(".csv")
    write_rounds_csv(trace.steps, csv_path)
    print(
        f"{name}: control={report.mean_reward_control:.4f} "
        f"treatment={report.mean_reward_treatment:.4f} "
        f"lift={report.lift_percent:+.2f}% p={report.p_value:.2e} "
        f"-> {out_path}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    decisions = list(read_decisions(args.decisions))
    rewards = list(read_rewards(args.rewards))
    joined = join_logs(decisions, rewards)
    labels = _labels_from_decisions(decisions)
    cfg = TrainConfig(
        hash_bits=args.hash_bits, epsilon_out=args.epsilon_out, seed=args.seed
    )
    policy = train_policy(joined.examples, cfg, actions=labels)
    data = serialize_policy(policy)
    Path(args.out).write_bytes(data + b"\n")
    print(
        f"trained {policy.model_id}: {len(joined.examples)} examples, "
        f"{len(labels)} actions, {len(data)} bytes -> {args.out}"
    )
    return 0


def _labels_from_decisions(decisions) -> tuple[str, ...] | None:
    if not decisions:
        return None
    n_actions = max(record.action_index for record in decisions) + 1
    n_actions = max(n_actions, 2)
    labels = [f"action-{i}" for i in range(n_actions)]
    for record in decisions:
        labels[record.action_index] = record.action_label
    return tuple(labels)


def _cmd_eval(args: argparse.Namespace) -> int:
    if (args.policy is None) == (args.fixed_action is None):
        raise _UsageError("exactly one of --policy and --fixed-action is required")
    decisions = list(read_decisions(args.decisions))
    rewards = list(read_rewards(args.rewards))
    joined = join_logs(decisions, rewards)
    if args.policy is not None:
        policy = deserialize_policy(Path(args.policy).read_bytes())
    else:
        k, idx = args.fixed_action
        if not 0 <= idx < k:
            raise _UsageError(f"fixed action {idx} out of range for {k} actions")
        policy = make_fixed_policy(k, idx)
    report = ips_value(joined.examples, policy)
    print(
        json.dumps(
            {
                "ipsValue": report.ips_value,
                "stderr": report.stderr,
                "nExamples": report.n_examples,
                "clippedFraction": report.clipped_fraction,
            },
            separators=(",", ":"),
        )
    )
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    policy = deserialize_policy(Path(args.model).read_bytes())
    try:
        items = json.loads(args.context)
        context = context_from_json(items)
    except (ValueError, KeyError, TypeError) as exc:
        raise _UsageError(f"malformed context JSON: {exc}") from exc
    x = encode_context(context, policy.hash_bits)
    prediction = select_action(policy, x, Random(f"predict:{args.seed}"))
    print(
        json.dumps(
            {
                "action": prediction.action,
                "actionIndex": prediction.action_index,
                "probability": prediction.probability,
                "scores": list(prediction.scores),
                "modelId": prediction.model_id,
            },
            separators=(",", ":"),
        )
    )
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (_UsageError, ConfigError, UnknownScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _USAGE_EXIT
    except (ResonanceError, OSError, ValueError, KeyError) as exc:
        # Covers malformed input files (bad JSONL lines, missing fields) as
        # runtime failures rather than tracebacks.
        print(f"error: {exc}", file=sys.stderr)
        return _RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())

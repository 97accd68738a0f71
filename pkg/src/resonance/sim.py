"""Synthetic environments and the end-to-end inference-log-learn loop.

Three scenarios stand in for tuning problems in an RTC stack: audio jitter
buffer inertia, screen-share encoding bitrate, and the network reconnect
threshold. Each has a factored categorical context space, a per-context
optimal action, and a quadratic-peak reward r(x, a) = clamp01(1 - (a -
a_star(x))^2 / s(x) + noise), which admits exact closed-form policy values
for oracle checks. The reconnect scenario bakes in the platform asymmetry:
the optimal threshold for mobile is strictly lower than for desktop in
otherwise identical contexts.

The loop driver wires the pieces together the way a client would: feature
values flow through a real broker tree (shared system features on the
root, scenario-local ones on a forked child), the policy is evaluated by
polling an output pipe, decisions and rewards are logged, and the model is
retrained and swapped in place on a fixed cadence.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Sequence, TextIO

import numpy as np
from scipy import special

from .broker import BrokerNode, FeatureKey, FeatureValue, Fresh, InputPipe, ValueKind
from .errors import ConfigError, UnknownScenarioError
from .learning import TrainConfig, train_policy
from .logs import DecisionRecord, RewardRecord, join_logs
from .policy import (
    DEFAULT_HASH_BITS,
    Context,
    HashedVector,
    LinearPolicy,
    Prediction,
    encode_context,
    greedy_action,
    select_action,
    zero_policy,
)

SCENARIO_NAMES = ("jb_hysteresis", "screenshare_encoding", "network_reconnect")

_EXPECTED_CONTEXTS = {
    "jb_hysteresis": 14,
    "screenshare_encoding": 440,
    "network_reconnect": 390,
}
_EXPECTED_ACTIONS = {
    "jb_hysteresis": 10,
    "screenshare_encoding": 10,
    "network_reconnect": 5,
}

# Pre-clip stretch applied to the mean of per-value contributions so optimal
# actions spread over the whole action range instead of clumping mid-scale.
_SPREAD_GAIN = 3.0
_SHARPNESS_RANGE = (2.0, 12.0)


def _clamp01(value: float) -> float:
    if value < 0.0:
        return 0.0
    if value > 1.0:
        return 1.0
    return value


@dataclass(frozen=True)
class FeatureSpec:
    """One context dimension: its key, value tokens, and where it is bound."""

    key: FeatureKey
    values: tuple[str, ...]
    shared: bool  # bound on the root node when True, on the scenario child otherwise


@dataclass
class ScenarioSpec:
    """Fully materialized environment: context space, actions, reward surface."""

    name: str
    features: tuple[FeatureSpec, ...]
    actions: tuple[str, ...]
    a_star: tuple[int, ...]
    sharpness: tuple[float, ...]
    noise_std: float
    seed: int
    output_name: str
    contexts: tuple[Context, ...] = field(repr=False, default=())
    context_ids: tuple[str, ...] = field(repr=False, default=())

    def __post_init__(self) -> None:
        if not self.contexts:
            self.contexts = tuple(
                Context(
                    tuple(
                        (f.key, FeatureValue.categorical(f.values[v]))
                        for f, v in zip(self.features, combo)
                    )
                )
                for combo in _enumerate_combos(self.features)
            )
        if not self.context_ids:
            self.context_ids = tuple(
                "|".join(f"{key.name}={value.payload}" for key, value in ctx.features)
                for ctx in self.contexts
            )

    @property
    def n_contexts(self) -> int:
        return len(self.contexts)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def raw_mean(self, context_index: int, action: int) -> float:
        """Noiseless reward before clamping."""
        delta = action - self.a_star[context_index]
        return 1.0 - (delta * delta) / self.sharpness[context_index]

    def mean_reward(self, context_index: int, action: int) -> float:
        """Noiseless expected reward after clamping."""
        return _clamp01(self.raw_mean(context_index, action))


def _enumerate_combos(features: Sequence[FeatureSpec]) -> list[tuple[int, ...]]:
    combos: list[tuple[int, ...]] = [()]
    for feature in features:
        combos = [combo + (v,) for combo in combos for v in range(len(feature.values))]
    return combos


def _scenario_features(name: str) -> tuple[FeatureSpec, ...]:
    platform = FeatureSpec(
        FeatureKey("system", "platform"), ("desktop", "mobile"), shared=True
    )
    network_type = FeatureSpec(
        FeatureKey("system", "networkType"), ("wired", "wifi", "3g", "4g", "5g"), shared=True
    )
    if name == "jb_hysteresis":
        return (
            FeatureSpec(FeatureKey("audio", "callType"), ("audio", "video"), shared=False),
            FeatureSpec(
                FeatureKey("system", "networkBucket"),
                tuple(f"nw{i}" for i in range(7)),
                shared=True,
            ),
        )
    if name == "screenshare_encoding":
        return (
            platform,
            network_type,
            FeatureSpec(
                FeatureKey("video", "bandwidthBucket"),
                tuple(f"bw{i}" for i in range(44)),
                shared=False,
            ),
        )
    if name == "network_reconnect":
        return (
            platform,
            network_type,
            FeatureSpec(
                FeatureKey("transport", "lossBucket"),
                tuple(f"loss{i}" for i in range(3)),
                shared=False,
            ),
            FeatureSpec(
                FeatureKey("transport", "rttBucket"),
                tuple(f"rtt{i}" for i in range(13)),
                shared=False,
            ),
        )
    raise UnknownScenarioError(name)


def _scenario_actions(name: str) -> tuple[str, ...]:
    if name == "jb_hysteresis":
        return tuple(f"inertia-{i}" for i in range(10))
    if name == "screenshare_encoding":
        return tuple(f"bitrate-{i}" for i in range(10))
    return tuple(f"threshold-{i}" for i in range(5))


def _scenario_output(name: str) -> str:
    return {
        "jb_hysteresis": "jbHysteresis",
        "screenshare_encoding": "encodingBitrate",
        "network_reconnect": "reconnectThreshold",
    }[name]


def build_scenario(name: str, seed: int, noise_std: float = 0.1) -> ScenarioSpec:
    """Deterministically materialize one of the built-in scenarios.

    Optimal actions are near-additive in the context features (each value
    token gets a seeded contribution, stretched and discretized), which a
    first-order hashed linear model can actually learn. For
    network_reconnect the mobile optimum is strictly below the desktop
    optimum for the same remaining context.
    """
    if name not in SCENARIO_NAMES:
        raise UnknownScenarioError(name)
    features = _scenario_features(name)
    actions = _scenario_actions(name)
    k = len(actions)
    rng = Random(f"{name}:{seed}:params")

    contributions = [
        {v: rng.random() for v in range(len(feature.values))} for feature in features
    ]
    combos = _enumerate_combos(features)

    a_star: list[int]
    if name == "network_reconnect":
        # Feature 0 is platform (desktop=0, mobile=1); decide per rest-combo.
        rest = _enumerate_combos(features[1:])
        n_rest = len(rest)
        a_star = [0] * (2 * n_rest)
        for j, combo in enumerate(rest):
            mean = sum(
                contributions[f + 1][v] for f, v in enumerate(combo)
            ) / len(combo)
            frac = _clamp01(0.5 + _SPREAD_GAIN * (mean - 0.5))
            desktop = 1 + int(frac * (k - 2) + 0.5)
            drop = 1 if rng.random() < 0.6 else 2
            mobile = max(0, desktop - drop)
            a_star[j] = desktop  # platform=desktop block comes first
            a_star[n_rest + j] = mobile
    else:
        a_star = []
        for combo in combos:
            mean = sum(contributions[f][v] for f, v in enumerate(combo)) / len(combo)
            frac = _clamp01(0.5 + _SPREAD_GAIN * (mean - 0.5))
            a_star.append(int(frac * (k - 1) + 0.5))

    lo, hi = _SHARPNESS_RANGE
    sharpness = tuple(lo + rng.random() * (hi - lo) for _ in combos)

    spec = ScenarioSpec(
        name=name,
        features=features,
        actions=actions,
        a_star=tuple(a_star),
        sharpness=sharpness,
        noise_std=noise_std,
        seed=seed,
        output_name=_scenario_output(name),
    )
    assert spec.n_contexts == _EXPECTED_CONTEXTS[name]
    assert spec.n_actions == _EXPECTED_ACTIONS[name]
    return spec


def true_value(spec: ScenarioSpec, policy: LinearPolicy | int | Sequence[int]) -> float:
    """Exact expected (noiseless) reward of a deterministic policy.

    Uniform average over contexts. The policy may be an integer (a fixed
    action), a per-context action sequence, or a LinearPolicy evaluated
    greedily.
    """
    if isinstance(policy, int):
        if not 0 <= policy < spec.n_actions:
            raise IndexError(f"fixed action {policy} out of range")
        choices: Sequence[int] = [policy] * spec.n_contexts
    elif isinstance(policy, LinearPolicy):
        choices = [
            greedy_action(policy, encode_context(ctx, policy.hash_bits))
            for ctx in spec.contexts
        ]
    else:
        if len(policy) != spec.n_contexts:
            raise ValueError("need one action per context")
        choices = policy
    total = sum(spec.mean_reward(i, a) for i, a in enumerate(choices))
    return total / spec.n_contexts


def best_fixed_action(spec: ScenarioSpec) -> int:
    """Brute-force best single action by exact enumeration; ties to lowest index."""
    values = [true_value(spec, a) for a in range(spec.n_actions)]
    best = 0
    for a in range(1, len(values)):
        if values[a] > values[best]:
            best = a
    return best


@dataclass(frozen=True)
class LoopConfig:
    rounds: int = 25000
    epsilon: float = 0.2
    model_update_interval: int = 5000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model_update_interval < 1:
            raise ConfigError("model_update_interval must be at least 1")
        if self.rounds < self.model_update_interval:
            raise ConfigError("rounds must be at least model_update_interval")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")


@dataclass(frozen=True)
class StepOutcome:
    context_index: int
    action_index: int
    probability: float
    reward: float
    model_version: int


@dataclass
class LoopResult:
    decisions: list[DecisionRecord]
    rewards: list[RewardRecord]
    steps: list[StepOutcome]
    policies: list[LinearPolicy]

    @property
    def final_policy(self) -> LinearPolicy:
        return self.policies[-1]


class _PolicyAdapter:
    """Broker-facing model wrapper around a LinearPolicy.

    Maps the polled feature values back to their precomputed encoding, so a
    broker-driven evaluation consumes the rng stream exactly like a direct
    select_action call.
    """

    def __init__(
        self,
        policy: LinearPolicy,
        rng: Random,
        encoded_by_values: dict[tuple, HashedVector],
        input_arity: int,
    ) -> None:
        self.policy = policy
        self.rng = rng
        self.encoded_by_values = encoded_by_values
        self.input_arity = input_arity

    def predict(self, values: Sequence[FeatureValue]) -> Prediction:
        x = self.encoded_by_values[tuple(v.payload for v in values)]
        return select_action(self.policy, x, self.rng)


def run_loop(
    spec: ScenarioSpec,
    cfg: LoopConfig,
    initial_policy: LinearPolicy | None = None,
    use_broker: bool = True,
) -> LoopResult:
    """Drive the full loop: broker-fed inference, logging, periodic retrain and swap.

    Deterministic given (spec, cfg, initial_policy). With use_broker=False
    the policy is called directly on the same seeded streams; the action
    sequence is identical, which is the transparency check for the broker.
    """
    env_rng = Random(f"{spec.name}:{cfg.seed}:env")
    explore_rng = Random(f"{spec.name}:{cfg.seed}:explore")
    run_id = f"{spec.name}-s{cfg.seed}"
    n_ctx = spec.n_contexts
    hash_bits = DEFAULT_HASH_BITS

    policy = initial_policy or zero_policy(
        f"{run_id}-v0", spec.actions, hash_bits, cfg.epsilon
    )
    encodes = [encode_context(ctx, policy.hash_bits) for ctx in spec.contexts]

    assoc = None
    out_pipe = None
    batch_by_context: list[list[tuple[InputPipe, FeatureValue]]] = []
    if use_broker:
        root = BrokerNode()
        child = root.fork()
        pipes = [
            (root if feature.shared else child).bind_input(feature.key, ValueKind.CATEGORICAL)
            for feature in spec.features
        ]
        batch_by_context = [
            [(pipe, value) for pipe, (_, value) in zip(pipes, ctx.features)]
            for ctx in spec.contexts
        ]
        encoded_by_values = {
            tuple(value.payload for _, value in ctx.features): encodes[i]
            for i, ctx in enumerate(spec.contexts)
        }
        arity = len(spec.features)
        adapter = _PolicyAdapter(policy, explore_rng, encoded_by_values, arity)
        assoc = child.associate_model(
            adapter, [feature.key for feature in spec.features], spec.output_name
        )
        out_pipe = child.bind_output(spec.output_name)

    train_cfg = TrainConfig(
        hash_bits=hash_bits, epsilon_out=cfg.epsilon, seed=cfg.seed
    )
    decisions: list[DecisionRecord] = []
    rewards: list[RewardRecord] = []
    steps: list[StepOutcome] = []
    policies = [policy]
    version = 0
    noise_std = spec.noise_std

    for round_no in range(1, cfg.rounds + 1):
        ctx_i = env_rng.randrange(n_ctx)
        if use_broker:
            root.publish_batch(batch_by_context[ctx_i])
            result = out_pipe.poll()
            prediction: Prediction = result.prediction
        else:
            prediction = select_action(policy, encodes[ctx_i], explore_rng)

        raw = spec.raw_mean(ctx_i, prediction.action_index)
        noise = env_rng.gauss(0.0, noise_std) if noise_std > 0.0 else 0.0
        reward = _clamp01(raw + noise)

        event_id = f"{run_id}-{round_no}"
        decisions.append(
            DecisionRecord(
                event_id=event_id,
                timestamp_ms=round_no,  # synthetic clock keeps runs reproducible
                model_id=prediction.model_id,
                context=spec.contexts[ctx_i],
                action_index=prediction.action_index,
                action_label=prediction.action,
                probability=prediction.probability,
            )
        )
        rewards.append(RewardRecord(event_id=event_id, reward=reward))
        steps.append(
            StepOutcome(
                context_index=ctx_i,
                action_index=prediction.action_index,
                probability=prediction.probability,
                reward=reward,
                model_version=version,
            )
        )

        if round_no % cfg.model_update_interval == 0:
            joined = join_logs(decisions, rewards).examples
            version += 1
            policy = train_policy(
                joined,
                train_cfg,
                actions=spec.actions,
                model_id=f"{run_id}-v{version}",
            )
            policies.append(policy)
            if use_broker:
                assoc.swap_model(
                    _PolicyAdapter(policy, explore_rng, encoded_by_values, arity)
                )

    return LoopResult(
        decisions=decisions, rewards=rewards, steps=steps, policies=policies
    )


@dataclass(frozen=True)
class WelchResult:
    t_statistic: float
    df: float
    p_value: float


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> WelchResult:
    """Two-sided Welch's t-test (unequal variances).

    Degenerate convention: with zero variance in both samples the p-value
    is 1.0 for equal means and 0.0 otherwise.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ConfigError("both samples need at least two observations")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    mean_diff = float(a.mean() - b.mean())
    se2 = var_a / len(a) + var_b / len(b)
    if se2 == 0.0:
        equal = mean_diff == 0.0
        return WelchResult(
            t_statistic=0.0 if equal else math.inf,
            df=float(len(a) + len(b) - 2),
            p_value=1.0 if equal else 0.0,
        )
    t = mean_diff / math.sqrt(se2)
    df = se2 * se2 / (
        (var_a / len(a)) ** 2 / (len(a) - 1) + (var_b / len(b)) ** 2 / (len(b) - 1)
    )
    p = 2.0 * float(special.stdtr(df, -abs(t)))
    return WelchResult(t_statistic=t, df=df, p_value=p)


@dataclass
class RunReport:
    mean_reward_control: float
    mean_reward_treatment: float
    lift_percent: float
    p_value: float
    per_context_regret: dict[str, float]
    n_rounds: int

    def to_json_dict(self) -> dict:
        return {
            "meanRewardControl": self.mean_reward_control,
            "meanRewardTreatment": self.mean_reward_treatment,
            "liftPercent": self.lift_percent,
            "pValue": self.p_value,
            "perContextRegret": self.per_context_regret,
            "nRounds": self.n_rounds,
        }


def _fixed_rollout(spec: ScenarioSpec, action: int, rounds: int, seed: int) -> float:
    """Mean sampled reward of a fixed action over the same env stream run_loop uses."""
    env_rng = Random(f"{spec.name}:{seed}:env")
    noise_std = spec.noise_std
    n_ctx = spec.n_contexts
    total = 0.0
    for _ in range(rounds):
        ctx_i = env_rng.randrange(n_ctx)
        raw = spec.raw_mean(ctx_i, action)
        noise = env_rng.gauss(0.0, noise_std) if noise_std > 0.0 else 0.0
        total += _clamp01(raw + noise)
    return total / rounds


def _replication_seed(base_seed: int, replication: int) -> int:
    return base_seed * 1_000_003 + replication


def compare_arms(
    spec: ScenarioSpec,
    fixed_action_index: int,
    cfg: LoopConfig,
    replications: int,
    treatment_fixed_action: int | None = None,
) -> RunReport:
    """Fixed-constant control vs learned-policy treatment over paired replications.

    Control is a fixed-action rollout; treatment is the loop's final-quarter
    mean reward. Each replication pairs both arms on the same environment
    stream. p-value is a two-sided Welch's t-test on the replication means.
    Passing treatment_fixed_action forces the treatment arm to a fixed
    rollout too (the null-experiment control for the harness itself).
    """
    if replications < 2:
        raise ConfigError("replications must be at least 2")
    if not 0 <= fixed_action_index < spec.n_actions:
        raise ConfigError(f"fixed action {fixed_action_index} out of range")
    if treatment_fixed_action is not None and not 0 <= treatment_fixed_action < spec.n_actions:
        raise ConfigError(f"treatment action {treatment_fixed_action} out of range")

    controls: list[float] = []
    treatments: list[float] = []
    regret_sums = [0.0] * spec.n_contexts
    for rep in range(replications):
        seed = _replication_seed(cfg.seed, rep)
        controls.append(_fixed_rollout(spec, fixed_action_index, cfg.rounds, seed))
        if treatment_fixed_action is not None:
            treatments.append(
                _fixed_rollout(spec, treatment_fixed_action, cfg.rounds, seed)
            )
            for i in range(spec.n_contexts):
                regret_sums[i] += 1.0 - spec.mean_reward(i, treatment_fixed_action)
        else:
            result = run_loop(spec, replace(cfg, seed=seed))
            quarter = result.steps[(3 * cfg.rounds) // 4 :]
            treatments.append(sum(step.reward for step in quarter) / len(quarter))
            final = result.final_policy
            for i, ctx in enumerate(spec.contexts):
                choice = greedy_action(final, encode_context(ctx, final.hash_bits))
                regret_sums[i] += 1.0 - spec.mean_reward(i, choice)

    mean_control = sum(controls) / replications
    mean_treatment = sum(treatments) / replications
    lift = (
        100.0 * (mean_treatment - mean_control) / mean_control
        if mean_control != 0.0
        else 0.0
    )
    welch = welch_t_test(treatments, controls)
    per_context_regret = {
        spec.context_ids[i]: regret_sums[i] / replications
        for i in range(spec.n_contexts)
    }
    return RunReport(
        mean_reward_control=mean_control,
        mean_reward_treatment=mean_treatment,
        lift_percent=lift,
        p_value=welch.p_value,
        per_context_regret=per_context_regret,
        n_rounds=cfg.rounds,
    )


def coherence_stress(
    polls: int = 100_000,
    tick_every: int = 50,
    tick_seconds: float = 0.0001,
) -> tuple[int, int]:
    """Stress mode: a publisher thread flips a correlated pair via batch
    publishes while this thread polls. Returns (fresh, mixed) observation
    counts; a correct broker yields mixed == 0. No determinism claim.

    The poller sleeps briefly every ``tick_every`` polls, like a consumer
    ticking on its own cadence; without the tick CPython's scheduler runs
    the two busy loops in long alternating bursts and they barely overlap.
    """

    class _Pair:
        input_arity = 2

        def predict(self, values):
            return (values[0].payload, values[1].payload)

    root = BrokerNode()
    left = root.bind_input(FeatureKey("stress", "left"), ValueKind.INT)
    right = root.bind_input(FeatureKey("stress", "right"), ValueKind.INT)
    root.associate_model(
        _Pair(), [FeatureKey("stress", "left"), FeatureKey("stress", "right")], "pair"
    )
    out = root.bind_output("pair")
    stop = threading.Event()

    def publisher() -> None:
        flip = 0
        while not stop.is_set():
            flip ^= 1
            value = FeatureValue.integer(flip)
            root.publish_batch([(left, value), (right, value)])

    worker = threading.Thread(target=publisher)
    worker.start()
    fresh = 0
    mixed = 0
    try:
        for i in range(polls):
            result = out.poll()
            if isinstance(result, Fresh):
                a, b = result.prediction
                fresh += 1
                if a != b:
                    mixed += 1
            if tick_every and i % tick_every == 0:
                time.sleep(tick_seconds)
    finally:
        stop.set()
        worker.join()
    return fresh, mixed


def write_report_json(report: RunReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(report.to_json_dict(), handle, indent=2)
        handle.write("\n")


def write_rounds_csv(steps: Sequence[StepOutcome], target: str | Path | TextIO) -> None:
    """Per-round CSV: round,context_id,action,prob,reward,model_version."""
    own = isinstance(target, (str, Path))
    handle = open(target, "w", encoding="utf-8", newline="") if own else target
    try:
        handle.write("round,context_id,action,prob,reward,model_version\n")
        for round_no, step in enumerate(steps, start=1):
            handle.write(
                f"{round_no},{step.context_index},{step.action_index},"
                f"{step.probability!r},{step.reward!r},{step.model_version}\n"
            )
    finally:
        if own:
            handle.close()

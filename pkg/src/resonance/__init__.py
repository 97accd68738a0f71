"""Learned contextual policies in place of fixed application constants.

The pieces, in the order data flows through them:

- ``broker``: hierarchical feature broker with typed input pipes, coherent
  snapshots, forked sub-component nodes, and pollable output pipes.
- ``policy``: hashed linear per-action scorer with epsilon-greedy selection
  and a compact versioned JSON serialization.
- ``logs``: append-only decision/reward JSONL logs and the join that turns
  them into training examples.
- ``learning``: importance-weighted regression that fits a new policy from
  joined logs, plus IPS off-policy evaluation.
- ``sim``: synthetic scenario environments and the loop driver that wires
  broker, policy, logs, and learner into the full inference-log-learn loop.
- ``cli``: the ``resonance`` command (simulate / train / eval / predict).
"""

from .broker import (
    BrokerNode,
    FeatureKey,
    FeatureSnapshot,
    FeatureValue,
    Fresh,
    InputPipe,
    Model,
    ModelAssociation,
    NotReady,
    OutputPipe,
    Unchanged,
    ValueKind,
    resolve_binding,
)
from .learning import OpeReport, TrainConfig, ips_value, make_fixed_policy, train_policy
from .logs import (
    DecisionLogWriter,
    DecisionRecord,
    JoinDiagnostics,
    JoinedExample,
    JoinResult,
    RewardLogWriter,
    RewardRecord,
    join_logs,
    read_decisions,
    read_rewards,
    write_decisions,
    write_rewards,
)
from .policy import (
    DEFAULT_EPSILON,
    DEFAULT_HASH_BITS,
    Context,
    HashedVector,
    LinearPolicy,
    Prediction,
    deserialize_policy,
    encode_context,
    fnv1a_64,
    greedy_action,
    score_actions,
    select_action,
    serialize_policy,
    zero_policy,
)
from .sim import (
    SCENARIO_NAMES,
    FeatureSpec,
    LoopConfig,
    LoopResult,
    RunReport,
    ScenarioSpec,
    StepOutcome,
    WelchResult,
    best_fixed_action,
    build_scenario,
    coherence_stress,
    compare_arms,
    run_loop,
    true_value,
    welch_t_test,
    write_report_json,
    write_rounds_csv,
)

__version__ = "0.1.0"

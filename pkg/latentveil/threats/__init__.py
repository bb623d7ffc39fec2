"""Attacker models and the T1/T2/T3 re-identification harness."""

from .classifier import (
    Accuracy,
    SurrogateClassifier,
    TrainConfig,
    evaluate,
    fit_logistic,
    topk_accuracy,
    train_classifier,
)
from .harness import (
    Attacker,
    HarnessConfig,
    InversionMemo,
    RemoteAttacker,
    SplitSpec,
    SurrogateAttacker,
    ThreatModelID,
    ThreatReport,
    run_threat_eval,
    run_threat_suite,
    split_dataset,
    surrogate_attacker,
)

__all__ = [
    "Accuracy",
    "Attacker",
    "HarnessConfig",
    "InversionMemo",
    "RemoteAttacker",
    "SplitSpec",
    "SurrogateAttacker",
    "SurrogateClassifier",
    "ThreatModelID",
    "ThreatReport",
    "TrainConfig",
    "evaluate",
    "fit_logistic",
    "run_threat_eval",
    "run_threat_suite",
    "split_dataset",
    "surrogate_attacker",
    "topk_accuracy",
    "train_classifier",
]

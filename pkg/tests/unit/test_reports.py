"""Tests for the terminal report tables."""
from __future__ import annotations

import math

import numpy as np

from latentveil.generator import LatentCode
from latentveil.inversion import InversionResult
from latentveil.inversion.benchmark import ComparisonRow, OptimizerComparison
from latentveil.metrics import QualityReport
from latentveil.reports import inversion_table, optimizer_table, quality_table, threat_table
from latentveil.threats import ThreatModelID, ThreatReport


def test_threat_table_shows_chance_level():
    report = ThreatReport(ThreatModelID.T2, "deepblur", "1.0", 0.25, 0.75, 20, 0, n_classes=10)
    out = threat_table([report])
    lines = out.splitlines()
    assert lines[0].startswith("| Threat")
    assert "| T2 " in lines[2]
    assert "0.250" in lines[2]
    assert "0.100" in lines[2]


def test_threat_table_names_attackers_when_there_are_several():
    local = ThreatReport(ThreatModelID.T1, "mask", "", 0.5, 0.9, 20, 0, n_classes=10)
    remote = ThreatReport(ThreatModelID.T1, "mask", "", 0.4, math.nan, 20, 0, n_classes=10,
                          attacker="remote")
    assert "Attacker" not in threat_table([local])
    lines = threat_table([local, remote]).splitlines()
    assert [c.strip() for c in lines[0].split("|")[1:3]] == ["Threat", "Attacker"]
    assert "| remote " in lines[3]
    assert "nan" not in lines[3]


def test_quality_table_renders_inf_and_missing_fid():
    report = QualityReport("identity", math.inf, 1.0, 1.0, None, 1)
    row = quality_table([report]).splitlines()[2]
    assert "inf" in row
    assert "| -" in row


def test_optimizer_table_marks_unreached_thresholds():
    comparison = OptimizerComparison(
        rows=[ComparisonRow("adam", 0, 1.0, 0.0)],
        steps_to_threshold={"lbfgs": [3, 5, 4], "adam": [None, None, 40]},
        threshold=1e-3,
        n_seeds=3,
    )
    lines = optimizer_table(comparison).splitlines()
    assert "Median steps to 0.001" in lines[0]
    assert "| lbfgs " in lines[2] and "| 4 " in lines[2] and "3/3" in lines[2]
    assert "never" in lines[3] and "1/3" in lines[3]


def test_inversion_table_lists_the_outcome():
    result = InversionResult(
        latent=LatentCode(np.zeros((2, 6))),
        losses=[1.0, 0.5],
        best_loss=0.5,
        steps_taken=1,
        elapsed=[0.0, 0.0],
        converged=False,
        optimizer="adam",
    )
    out = inversion_table(result)
    assert "adam" in out
    assert "5.000000e-01" in out
    assert "| converged " in out and "no" in out

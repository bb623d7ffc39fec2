"""Terminal tables for reports (stdout only; CSV files are the machine boundary)."""
from __future__ import annotations

import math
from typing import TYPE_CHECKING, Iterable, List, Sequence

from tabulate import tabulate

if TYPE_CHECKING:
    from ..inversion.benchmark import OptimizerComparison
    from ..inversion.search import InversionResult
    from ..metrics import QualityReport
    from ..threats.harness import ThreatReport

TABLE_FORMAT = "github"  # cells arrive pre-formatted; numparse is disabled below


def _num(value, digits: int = 4) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def threat_table(reports: Sequence["ThreatReport"]) -> str:
    """One row per report; an Attacker column appears when several attackers were scored."""
    headers = ["Threat", "Method", "Param", "Top-1", "Top-5", "n", "Chance"]
    rows = [
        [r.threat.value, r.method, r.param or "-", _num(r.top1, 3), _num(r.top5, 3),
         r.n_test, _num(r.chance, 3)]
        for r in reports
    ]
    if len({r.attacker for r in reports}) > 1:
        headers.insert(1, "Attacker")
        for row, r in zip(rows, reports):
            row.insert(1, r.attacker)
    return tabulate(rows, headers=headers, tablefmt=TABLE_FORMAT, disable_numparse=True)


def quality_table(reports: Sequence["QualityReport"]) -> str:
    rows = [
        [r.method, _num(r.psnr, 2), _num(r.ssim), _num(r.ms_ssim), _num(r.fid, 3), r.n]
        for r in reports
    ]
    return tabulate(rows, headers=["Method", "PSNR (dB)", "SSIM", "MS-SSIM", "FID", "n"],
                    tablefmt=TABLE_FORMAT, disable_numparse=True)


def optimizer_table(comparison: "OptimizerComparison") -> str:
    rows = []
    for entry in comparison.summary():
        median = entry["median_steps"]
        rows.append([
            entry["optimizer"],
            "never" if math.isinf(median) else f"{median:g}",
            f"{entry['reached']}/{entry['seeds']}",
        ])
    return tabulate(
        rows,
        headers=["Optimizer", f"Median steps to {comparison.threshold:g}", "Seeds reached"],
        tablefmt=TABLE_FORMAT,
        disable_numparse=True,
    )


def inversion_table(result: "InversionResult") -> str:
    rows = [
        ["optimizer", result.optimizer],
        ["steps", result.steps_taken],
        ["best loss", f"{result.best_loss:.6e}"],
        ["converged", "yes" if result.converged else "no"],
        ["fallback steps", len(result.fallback_steps)],
    ]
    return tabulate(rows, tablefmt=TABLE_FORMAT, disable_numparse=True)


def simple_table(rows: Iterable[Sequence[object]], headers: List[str]) -> str:
    return tabulate([list(r) for r in rows], headers=headers, tablefmt=TABLE_FORMAT, disable_numparse=True)

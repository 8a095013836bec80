"""Tabular rows shared by the harness and the CLI report writer."""
from __future__ import annotations

import math
from typing import NamedTuple

from .experiments import UniformScanResult
from .streams import ConvergenceDiagnostics

SCHEMA_VERSION = 1
COLUMNS = (
    "experiment_id", "weight_id", "n",
    "residual_cauchy_2", "residual_cauchy_inf",
    "residual_to_limit_2", "residual_to_limit_inf",
    "trunc_tau_perp", "trunc_residual_inf",
)


class Row(NamedTuple):
    experiment_id: str
    weight_id: str
    n: int
    residual_cauchy_2: float
    residual_cauchy_inf: float
    residual_to_limit_2: float
    residual_to_limit_inf: float
    trunc_tau_perp: float
    trunc_residual_inf: float


def diagnostics_rows(experiment_id: str, weight_id: str, diag: ConvergenceDiagnostics) -> list[Row]:
    tau = diag.truncation.tau_perp if diag.truncation is not None else math.nan
    return [
        Row(experiment_id, weight_id, n, c2, ci, l2, li, tau, t)
        for n, c2, ci, l2, li, t in zip(
            diag.checkpoints, diag.residual_cauchy_2, diag.residual_cauchy_inf,
            diag.residual_to_limit_2, diag.residual_to_limit_inf, diag.trunc_residual_inf)
    ]


def scan_rows(experiment_id: str, scan: UniformScanResult) -> list[Row]:
    tau = scan.truncation.tau_perp if scan.truncation is not None else math.nan
    return [
        Row(experiment_id, "sup", n, c2, ci, s2, si, tau, st)
        for n, c2, ci, s2, si, st in zip(scan.checkpoints, scan.sup_cauchy_2, scan.sup_cauchy_inf,
                                         scan.sup_2, scan.sup_inf, scan.sup_trunc_inf)
    ]


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[Row]) -> str:
    lines = [",".join(COLUMNS)]
    for row in sorted(rows, key=lambda r: (r.experiment_id, r.weight_id, r.n)):
        lines.append(",".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"

"""Per-step measurement records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

CSV_COLUMNS = (
    "t",
    "phase",
    "loss",
    "grad_norm_sq",
    "grad_norm_sq_V",
    "bits_step",
    "bits_cum",
    "eps_worker",
    "eps_server",
    "wall_ms",
)


@dataclass
class MetricsRecord:
    """Measurements taken at iterate ``x_t`` plus the traffic of step ``t``.

    ``grad_norm_sq_V`` weights each coordinate by ``1/sqrt(v_frozen)`` and is
    NaN during warmup, before the preconditioner exists. ``eps_worker`` is the
    largest per-worker sum of chunk residual norms, ``eps_server`` the sum of
    the owners' residual norms, both taken after the step.
    ``mean_grad_norm`` (norm of the averaged stochastic gradient) is kept in
    memory only and is not part of the CSV schema.
    """

    t: int
    phase: str
    loss: float
    grad_norm_sq: float
    grad_norm_sq_V: float
    bits_step: int
    bits_cum: int
    eps_worker: float
    eps_server: float
    wall_ms: float = 0.0
    mean_grad_norm: float = math.nan

    def row(self) -> list:
        return [getattr(self, name) for name in CSV_COLUMNS]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records, every: int = 1) -> str:
    """Render records as CSV text, keeping every ``every``-th step and always the last one."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    records = list(records)
    for j, rec in enumerate(records):
        if rec.t % every == 0 or j == len(records) - 1:
            writer.writerow([_fmt(v) for v in rec.row()])
    return buf.getvalue()


def write_csv(path, records, every: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(records_to_csv(records, every))

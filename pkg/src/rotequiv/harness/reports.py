"""CSV and manifest emission.

Fixed column schemas, floats printed with repr (shortest round-trip form),
newline-terminated rows: byte-stable for byte-equal inputs, and re-parsing
recovers the in-memory report exactly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .. import __version__
from .._backend import BACKEND
from .metrics import EquivErrorReport
from .robustness import RobustnessCurve
from .strictness import StrictnessReport
from .training import CANONICAL_TAPS, TrainingHistory

EQUIV_HEADER = "stage,angle_deg,epsilon,epsilon_normalized"
ROBUSTNESS_HEADER = "angle_deg,accuracy,mean_angular_error_deg"
TRAINING_HEADER = "epoch,loss,accuracy,angular_error_deg," + ",".join(
    f"eps_{tap}" for tap in CANONICAL_TAPS)
STRICTNESS_HEADER = "layer,name,padded_in,k,s,residue,verdict"
MISMATCH_HEADER = "which,x,y"


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_lines(path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_equiv_csv(path, report: EquivErrorReport) -> None:
    _write_lines(path, EQUIV_HEADER, report.rows)


def read_equiv_csv(path) -> EquivErrorReport:
    report = EquivErrorReport()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != EQUIV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            stage, angle, eps, eps_norm = line.strip().split(",")
            report.rows.append((stage, float(angle), float(eps), float(eps_norm)))
    return report


def write_robustness_csv(path, curve: RobustnessCurve) -> None:
    _write_lines(path, ROBUSTNESS_HEADER, curve.rows)


def read_robustness_csv(path) -> RobustnessCurve:
    curve = RobustnessCurve()
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ROBUSTNESS_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            angle, acc, err = line.strip().split(",")
            curve.rows.append((float(angle), float(acc), float(err)))
    return curve


def write_training_csv(path, history: TrainingHistory) -> None:
    rows = []
    for rec in history.records:
        row = [rec.epoch, fmt(rec.loss), fmt(rec.accuracy),
               fmt(rec.angular_error_deg)]
        for tap in CANONICAL_TAPS:
            val = rec.eps.get(tap)
            row.append("" if val is None else fmt(val))
        rows.append(row)
    _write_lines(path, TRAINING_HEADER, rows)


def write_strictness_csv(path, report: StrictnessReport) -> None:
    rows = [(r.index, r.name, r.padded_in, r.k, r.s, r.residue, r.verdict)
            for r in report.rows]
    _write_lines(path, STRICTNESS_HEADER, rows)


GRADCHECK_HEADER = "op,rel_error,verdict"


def write_gradcheck_csv(path, rows) -> None:
    _write_lines(path, GRADCHECK_HEADER, rows)


def write_mismatch_csv(path, demo) -> None:
    rows = [("pre", x, y) for x, y in demo.pre]
    rows += [("post", x, y) for x, y in demo.post]
    _write_lines(path, MISMATCH_HEADER, rows)


def write_manifest(out_dir, command: str, seed, config_text: str = None,
                   extra: dict = None) -> str:
    """Resolved-run manifest beside the outputs; returns its path."""
    payload = {
        "command": command,
        "seed": seed,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "backend": BACKEND,
    }
    if config_text is not None:
        payload["config"] = config_text
    if extra:
        payload.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path

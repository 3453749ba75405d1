"""Displacement metrics and degradation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ValidationError

ASWAEE_TIMES = (0.44, 0.96, 1.48, 2.00, 2.52)


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 2 or len(pred) < 1:
        raise DimensionError(f"expected matching (H, 2) arrays, got {pred.shape} and {truth.shape}")
    return pred, truth


def step_errors(pred, truth) -> np.ndarray:
    pred, truth = _pair(pred, truth)
    return np.hypot(*(pred - truth).T)


def ade(pred, truth) -> float:
    return float(step_errors(pred, truth).mean())


def fde(pred, truth) -> float:
    return float(step_errors(pred, truth)[-1])


def aswaee_indices(fps: float, times=ASWAEE_TIMES) -> list[int]:
    return [int(round(t * fps)) - 1 for t in times]


def aswaee(pred, truth, fps: float, times=ASWAEE_TIMES) -> float:
    """Mean displacement error at fixed prediction times (index ``round(t*fps) - 1``)."""
    err = step_errors(pred, truth)
    idx = aswaee_indices(fps, times)
    bad = [t for t, i in zip(times, idx) if not 0 <= i < len(err)]
    if bad:
        raise ValidationError(
            f"evaluation times {bad} fall outside a {len(err)}-step horizon at {fps} fps")
    return float(err[idx].mean())


def degradation(value: float, reference: float) -> float:
    return 100.0 * (value - reference) / reference


@dataclass
class MetricReport:
    name: str
    ade: float
    fde: float
    aswaee: float | None = None
    scene_ids: list[str] = field(default_factory=list)
    per_scene: np.ndarray | None = None  # (n, 2 or 3): ade, fde[, aswaee]
    reference: str | None = None
    degradation: dict[str, float] = field(default_factory=dict)

    def against(self, reference: "MetricReport") -> "MetricReport":
        """Copy with degradation percentages relative to ``reference``."""
        deg = {"ade": degradation(self.ade, reference.ade),
               "fde": degradation(self.fde, reference.fde)}
        if self.aswaee is not None and reference.aswaee:
            deg["aswaee"] = degradation(self.aswaee, reference.aswaee)
        return MetricReport(self.name, self.ade, self.fde, self.aswaee, list(self.scene_ids),
                            self.per_scene, reference.name, deg)

    def row(self) -> dict[str, object]:
        row = {"name": self.name, "ade": self.ade, "fde": self.fde}
        if self.aswaee is not None:
            row["aswaee"] = self.aswaee
        if self.reference:
            row["reference"] = self.reference
            for k, v in self.degradation.items():
                row[f"{k}_degradation_pct"] = v
        return row

    def same_values(self, other: "MetricReport") -> bool:
        return (self.ade == other.ade and self.fde == other.fde
                and self.aswaee == other.aswaee
                and np.array_equal(self.per_scene, other.per_scene))


def corpus_report(name: str, preds: np.ndarray, truths: np.ndarray, scene_ids=(),
                  fps: float | None = None, times=ASWAEE_TIMES) -> MetricReport:
    """Mean of per-scene metrics; ASWAEE only when every time fits the horizon."""
    rows = []
    use_aswaee = fps is not None and all(
        0 <= i < truths.shape[1] for i in aswaee_indices(fps, times))
    for p, t in zip(preds, truths):
        r = [ade(p, t), fde(p, t)]
        if use_aswaee:
            r.append(aswaee(p, t, fps, times))
        rows.append(r)
    per = np.asarray(rows, dtype=np.float64).reshape(len(rows), 3 if use_aswaee else 2)
    means = per.mean(axis=0) if len(per) else np.full(per.shape[1], np.nan)
    return MetricReport(name, float(means[0]), float(means[1]),
                        float(means[2]) if use_aswaee else None,
                        list(scene_ids), per)


def reports_to_csv(reports: list[MetricReport]) -> str:
    rows = [r.row() for r in reports]
    keys: list[str] = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def write_reports_csv(path: str | Path, reports: list[MetricReport]) -> None:
    Path(path).write_text(reports_to_csv(reports), encoding="utf-8")


def format_table(reports: list[MetricReport]) -> str:
    """Fixed-width table: ADE / FDE (degradation%) per report."""
    lines = [f"{'run':<34} {'ADE':>8} {'FDE':>8} {'ASWAEE':>8}  degradation% (ADE / FDE)"]
    for r in reports:
        asw = f"{r.aswaee:8.4f}" if r.aswaee is not None else f"{'-':>8}"
        deg = ""
        if r.reference:
            deg = f"{r.degradation['ade']:+.1f}% / {r.degradation['fde']:+.1f}%"
        lines.append(f"{r.name:<34} {r.ade:8.4f} {r.fde:8.4f} {asw}  {deg}")
    return "\n".join(lines)

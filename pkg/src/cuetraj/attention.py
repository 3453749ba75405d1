"""Temporal and spatial attention maps from captured CMT weights.

A map is the attention mass flowing from the selected rows (latent queries
by default) into trajectory and pose tokens, averaged uniformly over layers
and heads, summed per observed time-step or per keypoint, and normalised.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .embedding import KIND_CODE, QUERY
from .errors import ConfigError, ContractError, EmptyMapError
from .layouts import keypoint_layout
from .model import AttentionCapture
from .scene import CueKind

ROW_MODES = ("queries", "all")

_POSE_CODES = tuple(KIND_CODE[k] for k in (CueKind.P3D, CueKind.P2D))
_TEMPORAL_CODES = (KIND_CODE[CueKind.T],) + _POSE_CODES


def mean_weights(capture: AttentionCapture) -> np.ndarray:
    """Uniform mean over layers and heads: ``(S, S)``."""
    if capture is None or not capture.layers:
        raise ContractError("no attention capture: run the forward pass with capture enabled")
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in capture.layers])
    return stack.reshape(-1, *stack.shape[-2:]).mean(axis=0)


def _rows(capture: AttentionCapture, rows: str) -> np.ndarray:
    if rows not in ROW_MODES:
        raise ConfigError(f"unknown row selection {rows!r}; expected one of {ROW_MODES}")
    if rows == "queries":
        return capture.kinds == QUERY
    return np.ones(len(capture.kinds), dtype=bool)


def _normalise(mass: np.ndarray, what: str) -> np.ndarray:
    total = mass.sum()
    if not total > 0:
        raise EmptyMapError(f"no attention mass reaches any {what} token")
    return mass / total


def temporal_map(capture: AttentionCapture, rows: str = "queries") -> np.ndarray:
    """Attention mass per observed time-step, length ``t_obs``, summing to 1."""
    w = mean_weights(capture)
    cols = np.isin(capture.kinds, _TEMPORAL_CODES) & (capture.times < capture.t_obs)
    cols &= capture.available
    if not cols.any():
        raise EmptyMapError("capture holds no trajectory or pose tokens")
    mass_per_token = w[_rows(capture, rows)][:, cols].sum(axis=0)
    mass = np.bincount(capture.times[cols], weights=mass_per_token, minlength=capture.t_obs)
    return _normalise(mass, "trajectory or pose")


def spatial_map(capture: AttentionCapture, layout=None, rows: str = "queries") -> np.ndarray:
    """Attention mass per keypoint, length ``K``, summing to 1.

    Raises :class:`EmptyMapError` when the capture holds no pose tokens.
    """
    layout = layout or keypoint_layout(capture.keypoints)
    if layout.k != capture.keypoints:
        raise ConfigError(f"layout has {layout.k} keypoints, capture has {capture.keypoints}")
    w = mean_weights(capture)
    cols = np.isin(capture.kinds, _POSE_CODES) & (capture.elements >= 0)
    if not cols.any():
        raise EmptyMapError("capture holds no pose tokens")
    mass_per_token = w[_rows(capture, rows)][:, cols].sum(axis=0)
    mass = np.bincount(capture.elements[cols], weights=mass_per_token, minlength=layout.k)
    return _normalise(mass, "pose")


def average_maps(captures, fn, **kwargs) -> np.ndarray:
    """Mean of per-scene maps; scenes whose map is empty are skipped."""
    maps = []
    for cap in captures:
        try:
            maps.append(fn(cap, **kwargs))
        except EmptyMapError:
            continue
    if not maps:
        raise EmptyMapError("no scene produced a non-empty map")
    return np.mean(maps, axis=0)


def map_to_csv(values: np.ndarray, labels) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "weight"])
    for label, v in zip(labels, values):
        writer.writerow([label, repr(float(v))])
    return buf.getvalue()


def temporal_labels(t_obs: int) -> list[str]:
    return [f"t-{t_obs - 1 - i}" if i < t_obs - 1 else "t" for i in range(t_obs)]


def write_maps(out_dir: str | Path, temporal: np.ndarray, spatial: np.ndarray | None,
               layout=None, title: str = "") -> list[Path]:
    """CSV and SVG files for both maps; returns the written paths."""
    from .plotting import heatmap_svg

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    labels = temporal_labels(len(temporal))
    (out_dir / "temporal.csv").write_text(map_to_csv(temporal, labels), encoding="utf-8")
    heatmap_svg(out_dir / "temporal.svg", temporal[None, :], labels, ["attention"],
                title=f"{title} temporal".strip())
    written += [out_dir / "temporal.csv", out_dir / "temporal.svg"]
    if spatial is not None:
        layout = layout or keypoint_layout(len(spatial))
        names = [layout.label(i) for i in range(layout.k)]
        (out_dir / "spatial.csv").write_text(map_to_csv(spatial, names), encoding="utf-8")
        heatmap_svg(out_dir / "spatial.svg", spatial[:, None], ["attention"], names,
                    title=f"{title} spatial".strip())
        written += [out_dir / "spatial.csv", out_dir / "spatial.svg"]
    return written

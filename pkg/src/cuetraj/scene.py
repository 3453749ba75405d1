"""Scenes, agents and cue tensors, plus the JSON-lines corpus format.

A cue tensor holds ``(T_obs, e, f)`` values with a ``(T_obs, e)``
availability mask.  Masked-out values are never read by the model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ValidationError

PRIMARY = "primary"
NEIGHBOR = "neighbor"
ROLES = (PRIMARY, NEIGHBOR)


class CueKind(str, Enum):
    T = "T"
    P3D = "P3d"
    P2D = "P2d"
    B3D = "B3d"
    B2D = "B2d"

    @property
    def features(self) -> int:
        return _FEATURES[self]

    @property
    def is_pose(self) -> bool:
        return self in (CueKind.P3D, CueKind.P2D)

    @property
    def is_box(self) -> bool:
        return self in (CueKind.B3D, CueKind.B2D)

    def elements(self, k: int) -> int:
        if self is CueKind.T:
            return 1
        return k if self.is_pose else 2

    @classmethod
    def parse(cls, text: str) -> "CueKind":
        key = text.strip().lower()
        if len(key) == 3 and key[0] in "23" and key[1] == "d":
            key = key[2] + key[:2]  # "3dP" -> "p3d"
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValidationError(f"unknown cue kind {text!r}; expected one of "
                              + ", ".join(k.value for k in cls))


_FEATURES = {CueKind.T: 2, CueKind.P3D: 3, CueKind.P2D: 2, CueKind.B3D: 3, CueKind.B2D: 2}

# Canonical order in which cue tokens follow the trajectory and query slots.
CUE_ORDER = (CueKind.T, CueKind.P3D, CueKind.P2D, CueKind.B3D, CueKind.B2D)


def parse_cue_list(text: str) -> tuple[CueKind, ...]:
    kinds = tuple(CueKind.parse(t) for t in text.split(",") if t.strip())
    return tuple(k for k in CUE_ORDER if k in kinds)


@dataclass(frozen=True, eq=False)
class CueTensor:
    kind: CueKind
    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def full(cls, kind: CueKind, values) -> "CueTensor":
        values = np.asarray(values, dtype=np.float64)
        return cls(kind, values, np.ones(values.shape[:2], dtype=bool))

    @property
    def t_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_elements(self) -> int:
        return self.values.shape[1]

    def with_mask(self, mask: np.ndarray) -> "CueTensor":
        return replace(self, mask=np.asarray(mask, dtype=bool))

    def with_values(self, values: np.ndarray) -> "CueTensor":
        return replace(self, values=np.asarray(values, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Agent:
    cues: tuple[CueTensor, ...]
    role: str = NEIGHBOR

    def cue(self, kind: CueKind) -> CueTensor | None:
        for c in self.cues:
            if c.kind is kind:
                return c
        return None

    @property
    def kinds(self) -> tuple[CueKind, ...]:
        return tuple(c.kind for c in self.cues)

    @property
    def trajectory(self) -> CueTensor:
        c = self.cue(CueKind.T)
        if c is None:
            raise ValidationError("agent has no trajectory cue")
        return c

    def replace_cues(self, cues: Iterable[CueTensor]) -> "Agent":
        return replace(self, cues=tuple(cues))


@dataclass(frozen=True, eq=False)
class Scene:
    id: str
    agents: tuple[Agent, ...]
    future: np.ndarray
    fps: float = 2.5
    t_obs: int = 9
    t_pred: int = 12
    meta: dict = field(default_factory=dict)

    @property
    def primary(self) -> Agent:
        return self.agents[0]

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def keypoints(self) -> int | None:
        for a in self.agents:
            for c in a.cues:
                if c.kind.is_pose:
                    return c.n_elements
        return None

    def replace_agents(self, agents: Iterable[Agent]) -> "Scene":
        return replace(self, agents=tuple(agents))


@dataclass(frozen=True, eq=False)
class PredictionY:
    positions: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("prediction contains non-finite positions")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ValidationError(f"{path}: {message}")


def validate_scene(scene: Scene) -> Scene:
    """Check every structural invariant; returns the scene unchanged."""
    _check(isinstance(scene.t_obs, int) and scene.t_obs >= 1, "t_obs", "must be >= 1")
    _check(isinstance(scene.t_pred, int) and scene.t_pred >= 1, "t_pred", "must be >= 1")
    _check(math.isfinite(scene.fps) and scene.fps > 0, "fps", "must be positive")
    _check(len(scene.agents) >= 1, "agents", "a scene needs at least one agent")
    fut = np.asarray(scene.future)
    _check(fut.shape == (scene.t_pred, 2), "future",
           f"expected shape ({scene.t_pred}, 2), got {fut.shape}")
    _check(bool(np.all(np.isfinite(fut))), "future", "non-finite positions")
    k_seen = None
    for i, agent in enumerate(scene.agents):
        base = f"agents[{i}]"
        expected_role = PRIMARY if i == 0 else NEIGHBOR
        _check(agent.role == expected_role, f"{base}.role",
               f"expected {expected_role!r}, got {agent.role!r}")
        kinds = [c.kind for c in agent.cues]
        _check(kinds.count(CueKind.T) == 1, f"{base}.cues",
               f"exactly one trajectory cue required, found {kinds.count(CueKind.T)}")
        dup = {k.value for k in kinds if kinds.count(k) > 1}
        _check(not dup, f"{base}.cues", f"duplicate cue kinds {sorted(dup)}")
        for cue in agent.cues:
            path = f"{base}.cues.{cue.kind.value}"
            v, m = np.asarray(cue.values), np.asarray(cue.mask)
            _check(v.ndim == 3, f"{path}.values", f"expected rank 3, got shape {v.shape}")
            _check(v.shape[0] == scene.t_obs, f"{path}.values",
                   f"expected {scene.t_obs} time-steps, got {v.shape[0]}")
            _check(v.shape[2] == cue.kind.features, f"{path}.values",
                   f"expected feature count {cue.kind.features}, got {v.shape[2]}")
            if cue.kind.is_pose:
                _check(v.shape[1] >= 1, f"{path}.values", "no keypoints")
                if k_seen is None:
                    k_seen = v.shape[1]
                _check(v.shape[1] == k_seen, f"{path}.values",
                       f"keypoint count {v.shape[1]} differs from {k_seen}")
            else:
                e = cue.kind.elements(1)
                _check(v.shape[1] == e, f"{path}.values",
                       f"expected {e} elements, got {v.shape[1]}")
            _check(m.shape == v.shape[:2], f"{path}.mask",
                   f"expected shape {v.shape[:2]}, got {m.shape}")
            _check(m.dtype == bool, f"{path}.mask", "mask must be boolean")
            _check(bool(np.all(np.isfinite(v[m]))), f"{path}.values",
                   "non-finite value at an available entry")
    return scene


# ---------------------------------------------------------------------------
# JSON-lines corpus
# ---------------------------------------------------------------------------

def _nested(values: np.ndarray):
    arr = np.asarray(values, dtype=np.float64)
    if np.all(np.isfinite(arr)):
        return arr.tolist()
    return _nested_nan(arr.tolist())


def _nested_nan(x):
    if isinstance(x, list):
        return [_nested_nan(y) for y in x]
    return x if math.isfinite(x) else None


def _from_nested(obj) -> np.ndarray:
    def fix(x):
        if isinstance(x, list):
            return [fix(y) for y in x]
        return math.nan if x is None else x
    return np.asarray(fix(obj), dtype=np.float64)


def scene_to_dict(scene: Scene) -> dict:
    agents = []
    for agent in scene.agents:
        cues = {}
        for cue in agent.cues:
            cues[cue.kind.value] = {
                "values": _nested(cue.values),
                "mask": np.asarray(cue.mask, dtype=np.int64).tolist(),
            }
        agents.append({"role": agent.role, "cues": cues})
    out = {
        "id": scene.id,
        "fps": float(scene.fps),
        "t_obs": int(scene.t_obs),
        "t_pred": int(scene.t_pred),
        "agents": agents,
        "future": _nested(scene.future),
    }
    if scene.meta:
        out["meta"] = scene.meta
    return out


def scene_from_dict(obj: dict) -> Scene:
    try:
        agents = []
        for a in obj["agents"]:
            cues = []
            for name, c in a["cues"].items():
                values = _from_nested(c["values"])
                mask = np.asarray(c["mask"], dtype=np.int64).astype(bool)
                cues.append(CueTensor(CueKind.parse(name), values, mask))
            agents.append(Agent(tuple(cues), a.get("role", NEIGHBOR)))
        return Scene(
            id=str(obj["id"]),
            agents=tuple(agents),
            future=_from_nested(obj["future"]),
            fps=float(obj["fps"]),
            t_obs=int(obj["t_obs"]),
            t_pred=int(obj["t_pred"]),
            meta=obj.get("meta", {}),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scene record: {exc!r}") from exc


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"), allow_nan=False)


def loads_scene(line: str) -> Scene:
    return validate_scene(scene_from_dict(json.loads(line)))


def write_corpus(path: str | Path, scenes: Iterable[Scene]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for scene in scenes:
            f.write(dumps_scene(scene))
            f.write("\n")
            n += 1
    return n


def iter_corpus(path: str | Path) -> Iterator[Scene]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield loads_scene(line)
            except (ValidationError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc


def read_corpus(path: str | Path) -> list[Scene]:
    if not Path(path).is_file():
        raise ValidationError(f"corpus file not found: {path}")
    return list(iter_corpus(path))

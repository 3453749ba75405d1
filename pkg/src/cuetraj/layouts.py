"""Registered keypoint layouts: index -> (label, body group)."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnknownLayoutError

GROUPS = ("head", "torso", "left_arm", "right_arm", "left_leg", "right_leg")

_COCO17 = (
    ("nose", "head"),
    ("left_eye", "head"),
    ("right_eye", "head"),
    ("left_ear", "head"),
    ("right_ear", "head"),
    ("left_shoulder", "torso"),
    ("right_shoulder", "torso"),
    ("left_elbow", "left_arm"),
    ("right_elbow", "right_arm"),
    ("left_wrist", "left_arm"),
    ("right_wrist", "right_arm"),
    ("left_hip", "torso"),
    ("right_hip", "torso"),
    ("left_knee", "left_leg"),
    ("right_knee", "right_leg"),
    ("left_ankle", "left_leg"),
    ("right_ankle", "right_leg"),
)

# Desk-scale skeleton: enough to expose body yaw (shoulders) and gait (ankles).
_DESK5 = (
    ("nose", "head"),
    ("left_shoulder", "torso"),
    ("right_shoulder", "torso"),
    ("left_ankle", "left_leg"),
    ("right_ankle", "right_leg"),
)

_ROOT1 = (("root", "torso"),)

_REGISTRY = {17: _COCO17, 5: _DESK5, 1: _ROOT1}


@dataclass(frozen=True)
class KeypointLayout:
    entries: tuple[tuple[str, str], ...]

    @property
    def k(self) -> int:
        return len(self.entries)

    def label(self, index: int) -> str:
        return self.entries[index][0]

    def group(self, index: int) -> str:
        return self.entries[index][1]

    def __getitem__(self, index: int) -> tuple[str, str]:
        return self.entries[index]

    def indices(self, *groups: str) -> list[int]:
        for g in groups:
            if g not in GROUPS:
                raise KeyError(f"unknown keypoint group {g!r}")
        return [i for i, (_, g) in enumerate(self.entries) if g in groups]

    def index_of(self, label: str) -> int:
        for i, (name, _) in enumerate(self.entries):
            if name == label:
                return i
        raise KeyError(label)

    def limb_indices(self) -> list[int]:
        return self.indices("left_arm", "right_arm", "left_leg", "right_leg")

    def mirror(self, index: int) -> int:
        """Index of the left/right counterpart (itself when unpaired)."""
        name = self.label(index)
        for a, b in (("left_", "right_"), ("right_", "left_")):
            if name.startswith(a):
                return self.index_of(b + name[len(a):])
        return index


def keypoint_layout(k: int) -> KeypointLayout:
    if k < 1 or k not in _REGISTRY:
        raise UnknownLayoutError(
            f"no keypoint layout registered for K={k}; known: {sorted(_REGISTRY)}")
    return KeypointLayout(_REGISTRY[k])


def registered_sizes() -> list[int]:
    return sorted(_REGISTRY)

"""Training-time cue masking and evaluation-time occlusion / noise patterns.

Masking only clears availability flags; values are untouched except by the
Gaussian-noise pattern, which perturbs available pose values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .layouts import keypoint_layout
from .scene import CueKind, Scene

PATTERNS = ("none", "keep-fraction", "random-limb", "structured-right-leg", "frame-drop",
            "gaussian-noise")


@dataclass(frozen=True)
class EvalPattern:
    """One evaluation perturbation.

    ``keep`` maps cue kinds to keep probabilities (keep-fraction), ``p`` is
    the frame-drop probability and ``sigma`` the noise std in scene units.
    """

    name: str = "none"
    keep: dict = field(default_factory=dict)
    p: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.name not in PATTERNS:
            raise ConfigError(f"unknown evaluation pattern {self.name!r}; expected one of {PATTERNS}")
        for kind, q in self.keep.items():
            if not isinstance(kind, CueKind):
                raise ConfigError(f"keep-fraction key {kind!r} is not a cue kind")
            if not 0.0 <= q <= 1.0:
                raise ConfigError(f"keep fraction for {kind.value} must lie in [0, 1]")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("frame-drop probability must lie in [0, 1]")
        if self.sigma < 0:
            raise ConfigError("noise std must be >= 0")

    def describe(self) -> str:
        if self.name == "keep-fraction":
            return "keep(" + ",".join(f"{k.value}={v:g}" for k, v in self.keep.items()) + ")"
        if self.name == "frame-drop":
            return f"frame-drop({self.p:g})"
        if self.name == "gaussian-noise":
            return f"gaussian-noise({self.sigma:g})"
        return self.name


NO_PATTERN = EvalPattern()


@dataclass(frozen=True)
class MaskPolicy:
    modality_rate: float = 0.3
    meta_rate: float = 0.1
    seed: int = 0
    eval_pattern: EvalPattern = NO_PATTERN

    def __post_init__(self):
        for name in ("modality_rate", "meta_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")


def parse_keep_fraction(text: str, kinds: tuple[CueKind, ...] = ()) -> dict[CueKind, float]:
    """``"T=0.5,P3d=0.1"`` or positional ``"0.5,0.1"`` matched against ``kinds``."""
    out: dict[CueKind, float] = {}
    parts = [p.strip() for p in text.split(",") if p.strip()]
    for i, part in enumerate(parts):
        if "=" in part:
            name, value = part.split("=", 1)
            kind = CueKind.parse(name)
        else:
            if i >= len(kinds):
                raise ConfigError(f"keep fraction {part!r} has no matching cue kind")
            kind, value = kinds[i], part
        try:
            out[kind] = float(value)
        except ValueError as exc:
            raise ConfigError(f"invalid keep fraction {part!r}") from exc
    return out


def apply_train_masking(scene: Scene, policy: MaskPolicy, rng: np.random.Generator,
                        protect_primary_trajectory: bool = True) -> Scene:
    """Modality masking per non-trajectory cue, then meta masking per (t, element).

    The draws per cue are made in a fixed order regardless of the rates so
    that the same seed always gives the same masks.  At least one trajectory
    entry of the primary survives when ``protect_primary_trajectory``.
    """
    if policy.modality_rate == 0.0 and policy.meta_rate == 0.0:
        return scene
    agents = []
    for ai, agent in enumerate(scene.agents):
        cues = []
        for cue in agent.cues:
            drop_cue = rng.random() < policy.modality_rate
            meta = rng.random(cue.mask.shape) < policy.meta_rate
            mask = cue.mask.copy()
            if cue.kind is not CueKind.T and drop_cue:
                mask[:] = False
            else:
                mask &= ~meta
                if (cue.kind is CueKind.T and ai == 0 and protect_primary_trajectory
                        and cue.mask.any() and not mask.any()):
                    last = np.nonzero(cue.mask[:, 0])[0][-1]
                    mask[last, 0] = True
            cues.append(cue.with_mask(mask))
        agents.append(agent.replace_cues(cues))
    return scene.replace_agents(agents)


def _layout_for(scene: Scene):
    k = scene.keypoints
    if k is None:
        return None
    return keypoint_layout(k)


def apply_eval_pattern(scene: Scene, pattern: EvalPattern, rng: np.random.Generator) -> Scene:
    if pattern.name == "none":
        return scene
    layout = _layout_for(scene) if pattern.name in ("random-limb", "structured-right-leg") \
        else None
    agents = []
    for agent in scene.agents:
        frame_keep = None
        if pattern.name == "frame-drop":
            frame_keep = rng.random(scene.t_obs) >= pattern.p
        cues = []
        for cue in agent.cues:
            mask = cue.mask.copy()
            values = cue.values
            if pattern.name == "keep-fraction":
                q = pattern.keep.get(cue.kind)
                if q is not None:
                    mask &= rng.random(mask.shape) < q
            elif cue.kind.is_pose:
                if pattern.name == "random-limb":
                    limbs = layout.limb_indices()
                    mask[:, limbs] &= rng.random((mask.shape[0], len(limbs))) >= 0.5
                elif pattern.name == "structured-right-leg":
                    mask[:, layout.indices("right_leg")] = False
                elif pattern.name == "frame-drop":
                    mask &= frame_keep[:, None]
                elif pattern.name == "gaussian-noise":
                    noise = rng.normal(0.0, pattern.sigma, size=values.shape)
                    values = np.where(mask[..., None], values + noise, values)
            cues.append(cue.with_mask(mask).with_values(values) if values is not cue.values
                        else cue.with_mask(mask))
        agents.append(agent.replace_cues(cues))
    return scene.replace_agents(agents)


def restrict_cues(scene: Scene, kinds) -> Scene:
    """Clear the availability of every cue outside ``kinds`` (trajectory always kept)."""
    keep = set(kinds) | {CueKind.T}
    agents = []
    for agent in scene.agents:
        cues = [c if c.kind in keep else c.with_mask(np.zeros_like(c.mask)) for c in agent.cues]
        agents.append(agent.replace_cues(cues))
    return scene.replace_agents(agents)


def drop_cues(scene: Scene, kinds) -> Scene:
    """Remove every cue outside ``kinds`` from the scene (trajectory always kept)."""
    keep = set(kinds) | {CueKind.T}
    return scene.replace_agents(
        a.replace_cues(c for c in a.cues if c.kind in keep) for a in scene.agents)


def scene_stream(seed: int, scene_index: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, salt, scene_index]))

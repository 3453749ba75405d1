"""Synthetic multi-agent scenes with trajectory, pose and box cues.

Each agent walks with a latent heading schedule ``theta[k]`` (heading of the
displacement from frame ``k`` to ``k + 1``).  Its body yaw at frame ``t`` is
``theta[t - 1 + preview]``, so in turn scenes the skeleton rotates towards
the new heading ``preview`` steps before the path bends.  Positions are
re-centred so that the primary's last observed position is the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kvconfig
from .errors import ContractError, GenerationError
from .layouts import keypoint_layout
from .scene import NEIGHBOR, PRIMARY, Agent, CueKind, CueTensor, PredictionY, Scene

KINDS = ("constant-velocity", "turn-with-preview", "social-avoidance", "mixed")
SPLITS = ("train", "val", "test")

# body-frame template: x forward, y left, z up; root (mid-hip) at the origin
_TEMPLATE = {
    "root": (0.0, 0.0, 0.0),
    "nose": (0.10, 0.0, 0.65),
    "left_eye": (0.08, 0.03, 0.68),
    "right_eye": (0.08, -0.03, 0.68),
    "left_ear": (0.0, 0.07, 0.66),
    "right_ear": (0.0, -0.07, 0.66),
    "left_shoulder": (0.0, 0.18, 0.45),
    "right_shoulder": (0.0, -0.18, 0.45),
    "left_elbow": (0.0, 0.21, 0.18),
    "right_elbow": (0.0, -0.21, 0.18),
    "left_wrist": (0.02, 0.21, -0.05),
    "right_wrist": (0.02, -0.21, -0.05),
    "left_hip": (0.0, 0.10, 0.0),
    "right_hip": (0.0, -0.10, 0.0),
    "left_knee": (0.02, 0.10, -0.45),
    "right_knee": (0.02, -0.10, -0.45),
    "left_ankle": (0.0, 0.10, -0.85),
    "right_ankle": (0.0, -0.10, -0.85),
}

# gait swing amplitude per unit speed (forward axis); arms swing against legs
_SWING = {"knee": 0.12, "ankle": 0.25, "elbow": -0.08, "wrist": -0.15}


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "mixed"
    n_min: int = 1
    n_max: int = 4
    speed_min: float = 0.5
    speed_max: float = 1.5
    preview: int = 3
    turn_min_deg: float = 30.0
    turn_max_deg: float = 90.0
    turn_steps: int = 3
    turn_onset_max: int = 0
    neighbor_turn_prob: float = 0.5
    avoid_radius: float = 3.0
    avoid_gain: float = 0.35
    spawn_radius: float = 8.0
    noise: float = 0.0
    align: bool = False
    seed: int = 0
    train: int = 1000
    val: int = 100
    test: int = 200
    fps: float = 2.5
    t_obs: int = 9
    horizon: int = 12
    keypoints: int = 17

    def validate(self) -> "ScenarioSpec":
        if self.kind not in KINDS:
            raise GenerationError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise GenerationError(f"invalid agent range [{self.n_min}, {self.n_max}]")
        if self.speed_min < 0 or self.speed_max < self.speed_min:
            raise GenerationError(f"invalid speed range [{self.speed_min}, {self.speed_max}]")
        if self.speed_min <= 0 and self.kind in ("turn-with-preview", "mixed"):
            raise GenerationError("turning agents need a strictly positive speed")
        if self.preview < 0 or self.turn_steps < 1 or self.turn_onset_max < 0:
            raise GenerationError("preview, turn_steps and turn_onset_max must be >= 0 / >= 1")
        if self.turn_max_deg < self.turn_min_deg:
            raise GenerationError("turn_max_deg < turn_min_deg")
        if self.noise < 0:
            raise GenerationError("noise must be >= 0")
        if self.t_obs < 2 or self.horizon < 1 or self.fps <= 0:
            raise GenerationError("t_obs must be >= 2, horizon >= 1 and fps > 0")
        if min(self.train, self.val, self.test) < 0:
            raise GenerationError("split counts must be >= 0")
        keypoint_layout(self.keypoints)
        return self

    def counts(self) -> dict[str, int]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def to_kv(self) -> dict[str, str]:
        return {k: str(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_kv(cls, values: dict[str, str], strict: bool = True) -> "ScenarioSpec":
        return cls(**kvconfig.coerce(cls, values, strict=strict))


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------

def skeleton_template(k: int) -> np.ndarray:
    layout = keypoint_layout(k)
    return np.array([_TEMPLATE[layout.label(i)] for i in range(k)], dtype=np.float64)


def _swing_weights(k: int) -> np.ndarray:
    layout = keypoint_layout(k)
    w = np.zeros(k)
    for i in range(k):
        name = layout.label(i)
        for part, amp in _SWING.items():
            if name.endswith(part):
                w[i] = amp if name.startswith("left") else -amp
    return w


def pose_sequence(yaw: np.ndarray, phase: np.ndarray, speed: float, k: int) -> np.ndarray:
    """Root-relative 3-D keypoints ``(T, K, 3)`` for body yaw and gait phase per frame."""
    base = skeleton_template(k)
    swing = _swing_weights(k)
    t = len(yaw)
    body = np.broadcast_to(base, (t, k, 3)).copy()
    body[:, :, 0] += speed * np.sin(phase)[:, None] * swing[None, :]
    c, s = np.cos(yaw)[:, None], np.sin(yaw)[:, None]
    out = np.empty_like(body)
    out[:, :, 0] = c * body[:, :, 0] - s * body[:, :, 1]
    out[:, :, 1] = s * body[:, :, 0] + c * body[:, :, 1]
    out[:, :, 2] = body[:, :, 2]
    return out


def project_2d(pose3d: np.ndarray) -> np.ndarray:
    """Orthographic projection onto the x-z plane."""
    return pose3d[..., [0, 2]].copy()


def bounding_box(points: np.ndarray) -> np.ndarray:
    """Axis-aligned extent per frame: ``(T, 2, f)`` with min then max corner."""
    return np.stack([points.min(axis=1), points.max(axis=1)], axis=1)


# ---------------------------------------------------------------------------
# agent dynamics
# ---------------------------------------------------------------------------

@dataclass
class _AgentPlan:
    start: np.ndarray
    speed: float
    heading: float
    turn: float = 0.0       # signed total turn angle (rad)
    onset: int = 0          # first displacement index with a changed heading
    avoid: bool = False


def _turn_schedule(plan: _AgentPlan, steps: int, turn_steps: int) -> np.ndarray:
    k = np.arange(steps)
    frac = np.clip((k - plan.onset + 1) / turn_steps, 0.0, 1.0)
    return plan.heading + plan.turn * frac


def _simulate(plans: list[_AgentPlan], spec: ScenarioSpec, rng: np.random.Generator):
    """Integrate all agents; returns positions (N, F, 2) and headings (N, F-1+preview)."""
    frames = spec.t_obs + spec.horizon
    steps = frames - 1 + max(spec.preview, 1)
    n = len(plans)
    theta = np.stack([_turn_schedule(p, steps, spec.turn_steps) for p in plans])
    pos = np.zeros((n, frames + max(spec.preview, 1), 2))
    pos[:, 0] = [p.start for p in plans]
    offset = np.zeros(n)
    noise = rng.normal(0.0, spec.noise, size=(n, steps, 2)) if spec.noise > 0 else \
        np.zeros((n, steps, 2))
    for k in range(steps):
        for i, p in enumerate(plans):
            if not p.avoid:
                continue
            d = np.array([math.cos(theta[i, k]), math.sin(theta[i, k])])
            rel = pos[:, k] - pos[i, k]
            dist = np.hypot(rel[:, 0], rel[:, 1])
            dist[i] = np.inf
            j = int(np.argmin(dist))
            delta = 0.0
            if dist[j] < spec.avoid_radius and rel[j] @ d > 0:
                side = d[0] * rel[j, 1] - d[1] * rel[j, 0]
                delta = -math.copysign(1.0, side) * spec.avoid_gain * (1 - dist[j] / spec.avoid_radius)
            offset[i] = float(np.clip(0.7 * offset[i] + delta, -math.pi / 3, math.pi / 3))
            theta[i, k] = p.heading + offset[i]
        vel = np.stack([[p.speed * math.cos(theta[i, k]), p.speed * math.sin(theta[i, k])]
                        for i, p in enumerate(plans)])
        pos[:, k + 1] = pos[:, k] + vel + noise[:, k]
    return pos[:, :frames], theta


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _plans(kind: str, n: int, spec: ScenarioSpec, rng: np.random.Generator) -> list[_AgentPlan]:
    onset_base = spec.t_obs - 1
    plans = []
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(spec.speed_min, spec.speed_max)
    primary = _AgentPlan(np.zeros(2), speed, heading)
    if kind == "turn-with-preview":
        primary.turn = math.radians(rng.uniform(spec.turn_min_deg, spec.turn_max_deg)) \
            * rng.choice([-1.0, 1.0])
        primary.onset = onset_base + int(rng.integers(0, spec.turn_onset_max + 1))
    if kind == "social-avoidance":
        primary.avoid = True
    plans.append(primary)
    meet = spec.t_obs + 2
    for _ in range(n - 1):
        h = rng.uniform(-math.pi, math.pi)
        v = rng.uniform(spec.speed_min, spec.speed_max)
        if kind == "social-avoidance":
            target = primary.start + primary.speed * meet * _unit(primary.heading)
            target = target + rng.normal(0.0, 0.5, size=2)
            start = target - v * meet * _unit(h)
            plans.append(_AgentPlan(start, v, h, avoid=True))
            continue
        r = rng.uniform(1.5, spec.spawn_radius)
        a = rng.uniform(-math.pi, math.pi)
        plan = _AgentPlan(r * _unit(a), v, h)
        if kind == "turn-with-preview" and rng.random() < spec.neighbor_turn_prob and v > 0:
            plan.turn = math.radians(rng.uniform(spec.turn_min_deg, spec.turn_max_deg)) \
                * rng.choice([-1.0, 1.0])
            plan.onset = onset_base + int(rng.integers(0, spec.turn_onset_max + 1))
        plans.append(plan)
    return plans


def generate_scene(spec: ScenarioSpec, rng: np.random.Generator, scene_id: str,
                   kind: str | None = None) -> Scene:
    kind = kind or spec.kind
    if kind == "mixed":
        kind = KINDS[int(rng.integers(0, 3))]
    n = int(rng.integers(spec.n_min, spec.n_max + 1))
    if kind == "social-avoidance":
        n = max(n, min(2, spec.n_max))
    plans = _plans(kind, n, spec, rng)
    pos, theta = _simulate(plans, spec, rng)
    t_obs, horizon, k = spec.t_obs, spec.horizon, spec.keypoints
    origin = pos[0, t_obs - 1].copy()
    pos = pos - origin
    if spec.align:
        # rotate so the primary's last observed displacement points along +x
        rot = theta[0, t_obs - 2]
        c, s_ = math.cos(rot), math.sin(rot)
        pos = pos @ np.array([[c, -s_], [s_, c]])
        theta = theta - rot
    frames = np.arange(t_obs)
    # velocity heading at frame t is theta[t-1]; yaw looks `preview` steps ahead
    yaw_index = np.clip(frames - 1 + spec.preview, 0, theta.shape[1] - 1)
    agents = []
    for i, plan in enumerate(plans):
        phase0 = rng.uniform(0, 2 * math.pi)
        phase = phase0 + math.pi * 0.8 * frames
        p3 = pose_sequence(theta[i, yaw_index], phase, plan.speed, k)
        p2 = project_2d(p3)
        cues = (
            CueTensor.full(CueKind.T, pos[i, :t_obs, None, :]),
            CueTensor.full(CueKind.P3D, p3),
            CueTensor.full(CueKind.P2D, p2),
            CueTensor.full(CueKind.B3D, bounding_box(p3)),
            CueTensor.full(CueKind.B2D, bounding_box(p2)),
        )
        agents.append(Agent(cues, PRIMARY if i == 0 else NEIGHBOR))
    primary = plans[0]
    meta = {
        "kind": kind,
        "speed": primary.speed,
        "future_headings": theta[0, t_obs - 1:t_obs - 1 + horizon].tolist(),
        "turn": primary.turn,
        "noise": spec.noise,
        "futures": [pos[i, t_obs:t_obs + horizon].tolist() for i in range(len(plans))],
    }
    return Scene(scene_id, tuple(agents), pos[0, t_obs:t_obs + horizon].copy(),
                 fps=spec.fps, t_obs=t_obs, t_pred=horizon, meta=meta)


def scene_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SPLITS.index(split), index]))


def generate(spec: ScenarioSpec) -> dict[str, list[Scene]]:
    """Build the train/val/test corpus; identical ``spec`` gives identical scenes."""
    spec.validate()
    out = {}
    for split, count in spec.counts().items():
        out[split] = [generate_scene(spec, scene_rng(spec.seed, split, i),
                                     f"{spec.kind}-{split}-{i:06d}")
                      for i in range(count)]
    return out


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def oracle_predict(scene: Scene, kind: str) -> PredictionY:
    """Reference predictions for generated scenes.

    ``"cv"`` extrapolates the last observed velocity; ``"turn"`` replays the
    generator's latent heading schedule (a ground-truth-informed bound that
    ignores process noise).
    """
    traj = scene.primary.trajectory
    if kind == "cv":
        if not traj.mask[-1, 0] or not traj.mask[-2, 0]:
            raise ContractError("constant-velocity oracle needs the last two observations")
        last = traj.values[-1, 0]
        vel = last - traj.values[-2, 0]
        steps = np.arange(1, scene.t_pred + 1)[:, None]
        return PredictionY(last + steps * vel)
    if kind == "turn":
        meta = scene.meta
        if meta.get("kind") not in ("turn-with-preview", "constant-velocity"):
            raise ContractError(f"turn oracle does not apply to {meta.get('kind')!r} scenes")
        headings = np.asarray(meta["future_headings"])
        steps = meta["speed"] * np.stack([np.cos(headings), np.sin(headings)], axis=1)
        return PredictionY(traj.values[-1, 0] + np.cumsum(steps, axis=0))
    raise ContractError(f"unknown oracle kind {kind!r}")


def expected_cv_ade(noise: float, horizon: int) -> float:
    """Closed-form mean CV-oracle ADE on constant-velocity scenes with process noise.

    The step-``j`` error is a sum of ``j`` fresh displacement noises minus
    ``j`` times the last observed one, so each axis has variance
    ``noise**2 * (j + j**2)`` and the expected 2-D norm is
    ``noise * sqrt(j + j**2) * sqrt(pi / 2)``.
    """
    j = np.arange(1, horizon + 1)
    return float(np.mean(noise * np.sqrt(j + j * j) * math.sqrt(math.pi / 2)))


def with_spec(spec: ScenarioSpec, **changes) -> ScenarioSpec:
    return replace(spec, **changes).validate()

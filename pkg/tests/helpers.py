"""Shared test utilities: finite differences and small scene factories."""

from __future__ import annotations

import numpy as np

from cuetraj.nn import Tensor, backward


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5, points: int = 3) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place).

    ``points=5`` uses the fourth-order stencil, which allows a larger ``h``
    and so less rounding noise.
    """
    if points == 3:
        stencil = ((1, 0.5), (-1, -0.5))
    elif points == 5:
        stencil = ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))
    else:
        raise ValueError("points must be 3 or 5")
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        total = 0.0
        for k, w in stencil:
            arr[i] = old + k * h
            total += w * f()
        arr[i] = old
        g[i] = total / h
    return g


def rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> float:
    """Relative error with an absolute floor for tensors whose true gradient is ~0."""
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


def check_grads(loss_fn, tensors: dict[str, Tensor], h: float = 1e-5, points: int = 3,
                floor: float = 1e-6) -> dict[str, float]:
    """Return per-tensor relative errors between backward() and finite differences."""
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}
    out = {}
    for k, t in tensors.items():
        num = numeric_grad(lambda: float(loss_fn().data), t.data, h, points)
        out[k] = rel_error(analytic[k], num, floor)
    return out


def random_scenes(n: int, seed: int = 0, k: int = 5, t_obs: int = 9, horizon: int = 12,
                  n_max: int = 4, kind: str = "mixed", cue_prob: float = 0.6,
                  meta_rate: float = 0.2):
    """Generated scenes with a random cue subset per agent and random entry masks.

    The primary always keeps at least its last trajectory entry.
    """
    from cuetraj.datagen import ScenarioSpec, generate_scene
    from cuetraj.scene import CueKind

    spec = ScenarioSpec(kind=kind, keypoints=k, t_obs=t_obs, horizon=horizon, n_max=n_max)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        scene = generate_scene(spec, np.random.default_rng([seed, i]), f"r{seed}-{i}")
        agents = []
        for a, agent in enumerate(scene.agents):
            cues = []
            for cue in agent.cues:
                if cue.kind is not CueKind.T and rng.random() > cue_prob:
                    continue
                mask = cue.mask & (rng.random(cue.mask.shape) >= meta_rate)
                if cue.kind is CueKind.T and a == 0:
                    mask[-1] = True
                cues.append(cue.with_mask(mask))
            agents.append(agent.replace_cues(cues))
        out.append(scene.replace_agents(agents))
    return out


def tiny_config(**kw):
    from cuetraj.model import ModelConfig

    base = dict(d_model=16, cmt_layers=2, cmt_heads=2, st_layers=1, st_heads=2, keypoints=5)
    base.update(kw)
    return ModelConfig(**base)

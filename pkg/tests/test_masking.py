import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cuetraj.errors import ConfigError
from cuetraj.layouts import keypoint_layout
from cuetraj.masking import (
    EvalPattern, MaskPolicy, apply_eval_pattern, apply_train_masking, drop_cues,
    parse_keep_fraction, restrict_cues, scene_stream,
)
from cuetraj.model import ModelParams, forward
from cuetraj.scene import CueKind

from helpers import random_scenes, tiny_config


def full_scene(seed=0, k=17):
    return random_scenes(1, seed=seed, k=k, cue_prob=1.0, meta_rate=0.0)[0]


def masks(scene):
    return [[c.mask.copy() for c in a.cues] for a in scene.agents]


def test_policy_rates_validated():
    with pytest.raises(ConfigError):
        MaskPolicy(1.5, 0.1)
    with pytest.raises(ConfigError):
        EvalPattern("blur")
    with pytest.raises(ConfigError):
        EvalPattern("keep-fraction", {CueKind.T: 2.0})


def test_modality_rate_one_empties_every_non_trajectory_cue():
    scene = full_scene()
    out = apply_train_masking(scene, MaskPolicy(1.0, 0.0), np.random.default_rng(0))
    for agent in out.agents:
        for cue in agent.cues:
            assert cue.mask.all() if cue.kind is CueKind.T else not cue.mask.any()


def test_zero_rates_identity():
    scene = full_scene()
    assert apply_train_masking(scene, MaskPolicy(0.0, 0.0), np.random.default_rng(0)) is scene


def test_modality_frequency_matches_binomial():
    scene = full_scene()
    n_cues = sum(1 for a in scene.agents for c in a.cues if c.kind is not CueKind.T)
    dropped = total = 0
    rng = np.random.default_rng(1)
    while total < 10_000:
        out = apply_train_masking(scene, MaskPolicy(0.3, 0.0), rng)
        for agent in out.agents:
            for cue in agent.cues:
                if cue.kind is not CueKind.T:
                    dropped += not cue.mask.any()
                    total += 1
    # binomial std at p=0.3, n=10k is 0.0046; +-0.01 is over 2 sigma
    assert abs(dropped / total - 0.3) < 0.01
    assert n_cues > 0


def test_meta_frequency():
    scene = full_scene()
    out = apply_train_masking(scene, MaskPolicy(0.0, 0.1), np.random.default_rng(2))
    flags = np.concatenate([c.mask.ravel() for a in out.agents for c in a.cues])
    assert abs(1 - flags.mean() - 0.1) < 0.03


def test_primary_trajectory_never_fully_removed():
    scene = full_scene()
    for seed in range(50):
        out = apply_train_masking(scene, MaskPolicy(1.0, 1.0), np.random.default_rng(seed))
        assert out.primary.trajectory.mask.any()


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 10_000))
def test_train_masking_only_clears_flags(mod, meta, seed):
    scene = full_scene(seed % 7)
    a = apply_train_masking(scene, MaskPolicy(mod, meta), np.random.default_rng(seed))
    b = apply_train_masking(scene, MaskPolicy(mod, meta), np.random.default_rng(seed))
    for ag0, ag1, ag2 in zip(scene.agents, a.agents, b.agents):
        for c0, c1, c2 in zip(ag0.cues, ag1.cues, ag2.cues):
            assert c1.values is c0.values
            assert not np.any(c1.mask & ~c0.mask)
            assert np.array_equal(c1.mask, c2.mask)


def test_keep_fraction_one_is_identity():
    scene = full_scene()
    pattern = EvalPattern("keep-fraction", {k: 1.0 for k in CueKind})
    out = apply_eval_pattern(scene, pattern, np.random.default_rng(0))
    assert all(np.array_equal(x, y) for xs, ys in zip(masks(scene), masks(out))
               for x, y in zip(xs, ys))


def test_keep_fraction_rate():
    scene = full_scene()
    out = apply_eval_pattern(scene, EvalPattern("keep-fraction", {CueKind.P3D: 0.25}),
                             np.random.default_rng(3))
    kept = np.concatenate([a.cue(CueKind.P3D).mask.ravel() for a in out.agents]).mean()
    assert abs(kept - 0.25) < 0.08
    assert all(a.trajectory.mask.all() for a in out.agents)


def test_structured_right_leg_masks_exact_indices():
    scene = full_scene()
    lay = keypoint_layout(17)
    leg = lay.indices("right_leg")
    out = apply_eval_pattern(scene, EvalPattern("structured-right-leg"), np.random.default_rng(0))
    for agent in out.agents:
        for kind in (CueKind.P3D, CueKind.P2D):
            m = agent.cue(kind).mask
            assert not m[:, leg].any()
            others = [i for i in range(17) if i not in leg]
            assert m[:, others].all()


def test_random_limb_masks_half_of_limbs():
    scene = full_scene()
    lay = keypoint_layout(17)
    out = apply_eval_pattern(scene, EvalPattern("random-limb"), np.random.default_rng(4))
    limb = lay.limb_indices()
    rest = [i for i in range(17) if i not in limb]
    m = np.concatenate([a.cue(CueKind.P3D).mask for a in out.agents])
    assert m[:, rest].all()
    assert abs(1 - m[:, limb].mean() - 0.5) < 0.1


def test_frame_drop_whole_frames():
    scene = full_scene()
    out = apply_eval_pattern(scene, EvalPattern("frame-drop", p=0.5), np.random.default_rng(5))
    for agent in out.agents:
        m3, m2 = agent.cue(CueKind.P3D).mask, agent.cue(CueKind.P2D).mask
        assert np.all(m3.all(axis=1) | ~m3.any(axis=1))
        assert np.array_equal(m3, m2)


def test_frame_drop_full_equals_trajectory_only():
    config = tiny_config(keypoints=17)
    params = ModelParams.init(config, seed=1)
    for seed in range(5):
        scene = restrict_cues(full_scene(seed), [CueKind.T, CueKind.P3D, CueKind.P2D])
        dropped = apply_eval_pattern(scene, EvalPattern("frame-drop", p=1.0),
                                     np.random.default_rng(seed))
        a = forward(dropped, params, config)[0].positions
        b = forward(restrict_cues(scene, [CueKind.T]), params, config)[0].positions
        assert np.array_equal(a, b)


def test_gaussian_noise_only_touches_available_pose_values():
    scene = full_scene()
    p3 = scene.primary.cue(CueKind.P3D)
    mask = p3.mask.copy()
    mask[:2] = False
    scene = scene.replace_agents([scene.primary.replace_cues(
        [c.with_mask(mask) if c.kind is CueKind.P3D else c for c in scene.primary.cues])]
        + list(scene.agents[1:]))
    out = apply_eval_pattern(scene, EvalPattern("gaussian-noise", sigma=0.5),
                             np.random.default_rng(6))
    v0, v1 = scene.primary.cue(CueKind.P3D).values, out.primary.cue(CueKind.P3D).values
    assert np.array_equal(v0[:2], v1[:2])
    assert not np.array_equal(v0[2:], v1[2:])
    for kind in (CueKind.T, CueKind.B3D):
        assert np.array_equal(scene.primary.cue(kind).values, out.primary.cue(kind).values)


def test_same_seed_same_masks():
    scene = full_scene()
    pattern = EvalPattern("random-limb")
    a = apply_eval_pattern(scene, pattern, scene_stream(3, 0, 1))
    b = apply_eval_pattern(scene, pattern, scene_stream(3, 0, 1))
    assert all(np.array_equal(x, y) for xs, ys in zip(masks(a), masks(b)) for x, y in zip(xs, ys))


def test_parse_keep_fraction():
    assert parse_keep_fraction("T=0.5,P3d=0.1") == {CueKind.T: 0.5, CueKind.P3D: 0.1}
    assert parse_keep_fraction("0.5,0.1", (CueKind.T, CueKind.P3D)) == {
        CueKind.T: 0.5, CueKind.P3D: 0.1}
    with pytest.raises(ConfigError):
        parse_keep_fraction("0.5,0.1,0.3", (CueKind.T,))


def test_restrict_versus_drop():
    scene = full_scene()
    r = restrict_cues(scene, [CueKind.P2D])
    d = drop_cues(scene, [CueKind.P2D])
    assert r.primary.kinds == scene.primary.kinds
    assert d.primary.kinds == (CueKind.T, CueKind.P2D)
    assert not r.primary.cue(CueKind.P3D).mask.any()

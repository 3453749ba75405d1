import numpy as np
import pytest

from cuetraj.attention import (
    average_maps, map_to_csv, mean_weights, spatial_map, temporal_labels, temporal_map, write_maps,
)
from cuetraj.embedding import KIND_CODE, QUERY
from cuetraj.errors import ConfigError, ContractError, EmptyMapError
from cuetraj.model import AttentionCapture, ModelParams, forward
from cuetraj.scene import CueKind

from helpers import random_scenes, tiny_config

T_CODE, P3D_CODE = KIND_CODE[CueKind.T], KIND_CODE[CueKind.P3D]


def synthetic_capture(weights=None, t_obs=9, k=5, n_queries=3, heads=2, layers=2):
    """T tokens for every observed step, P3d tokens for every (t, keypoint), then queries."""
    kinds = [T_CODE] * t_obs + [P3D_CODE] * (t_obs * k) + [QUERY] * n_queries
    times = list(range(t_obs)) + [t for t in range(t_obs) for _ in range(k)] + [0] * n_queries
    elements = [-1] * t_obs + [e for _ in range(t_obs) for e in range(k)] + [-1] * n_queries
    s = len(kinds)
    if weights is None:
        weights = np.full((s, s), 1.0 / s)
    maps = [np.broadcast_to(weights, (heads, s, s)).copy() for _ in range(layers)]
    return AttentionCapture(layers=maps, kinds=np.array(kinds), times=np.array(times),
                            elements=np.array(elements), available=np.ones(s, bool),
                            t_obs=t_obs, horizon=12, keypoints=k)


def test_uniform_weights_give_uniform_maps():
    cap = synthetic_capture()
    np.testing.assert_allclose(temporal_map(cap), np.full(9, 1 / 9), atol=1e-15)
    np.testing.assert_allclose(spatial_map(cap), np.full(5, 1 / 5), atol=1e-15)
    np.testing.assert_allclose(temporal_map(cap, rows="all"), np.full(9, 1 / 9), atol=1e-15)


def test_mass_follows_weights():
    cap = synthetic_capture()
    s = len(cap.kinds)
    w = np.zeros((s, s))
    w[:, 8] = 1.0  # every row attends only to the T token at the last observed step
    cap = synthetic_capture(w)
    expected = np.zeros(9)
    expected[8] = 1.0
    assert np.array_equal(temporal_map(cap), expected)
    with pytest.raises(EmptyMapError):
        spatial_map(cap)


def test_mean_weights_over_layers_and_heads():
    cap = synthetic_capture()
    cap.layers[0][0] *= 0
    cap.layers[0][0][:, 0] = 1.0
    w = mean_weights(cap)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_absent_capture_raises():
    with pytest.raises(ContractError):
        mean_weights(None)
    with pytest.raises(ConfigError):
        temporal_map(synthetic_capture(), rows="keys")


def test_no_pose_tokens_is_empty_spatial_map():
    cap = synthetic_capture(t_obs=4, k=5)
    keep = cap.kinds != P3D_CODE
    s = int(keep.sum())
    empty = AttentionCapture([np.full((1, s, s), 1 / s)], cap.kinds[keep], cap.times[keep],
                             cap.elements[keep], cap.available[keep], 4, 12, 5)
    with pytest.raises(EmptyMapError):
        spatial_map(empty)
    assert temporal_map(empty).shape == (4,)
    assert average_maps([empty, cap], spatial_map).shape == (5,)
    with pytest.raises(EmptyMapError):
        average_maps([empty], spatial_map)


def test_model_maps_are_distributions():
    config = tiny_config()
    params = ModelParams.init(config, seed=0)
    for scene in random_scenes(5, seed=1, cue_prob=1.0):
        _, cap = forward(scene, params, config, capture=True)
        for layer in cap.layers:
            assert (layer >= 0).all()
            np.testing.assert_allclose(layer.sum(axis=-1), 1.0, atol=1e-9)
        tm = temporal_map(cap)
        assert (tm >= 0).all() and abs(tm.sum() - 1) < 1e-9
        if CueKind.P3D in scene.agents[0].kinds or CueKind.P2D in scene.agents[0].kinds:
            assert abs(spatial_map(cap).sum() - 1) < 1e-9


def test_labels_and_files(tmp_path):
    assert temporal_labels(3) == ["t-2", "t-1", "t"]
    assert map_to_csv(np.array([0.25, 0.75]), ["a", "b"]) == "label,weight\na,0.25\nb,0.75\n"
    written = write_maps(tmp_path, np.full(9, 1 / 9), np.full(5, 0.2), title="demo")
    assert sorted(p.name for p in written) == ["spatial.csv", "spatial.svg",
                                               "temporal.csv", "temporal.svg"]
    first = (tmp_path / "temporal.svg").read_bytes()
    write_maps(tmp_path, np.full(9, 1 / 9), np.full(5, 0.2), title="demo")
    assert (tmp_path / "temporal.svg").read_bytes() == first

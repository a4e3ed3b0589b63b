import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcorr.errors import ConfigError, GenerationError
from gcorr.metrics import evaluate
from gcorr.saliency import SaliencyConfig, grounded_saliency, select_seeds
from gcorr.synthgen import (
    SceneSpec,
    disc_mask,
    generate_scene,
    max_separated_vectors,
    sample_prototypes,
    shuffle_identities,
)
from gcorr.tensor import BACKGROUND, cosine_matrix


def test_single_object_noiseless():
    truth = generate_scene(SceneSpec(height=8, width=8, num_objects=1, frames=1, seed=2))
    flat = truth.features.data.reshape(-1, truth.features.data.shape[-1])
    assert len(np.unique(flat, axis=0)) == 2
    c = truth.trajectories[0, 0]
    assert np.array_equal(truth.labels.labels[0] == 0, disc_mask(8, 8, c, truth.radii[0]))


def test_same_seed_is_bit_identical():
    spec = SceneSpec(noise_sigma=0.1, seed=17)
    assert generate_scene(spec) == generate_scene(spec)
    assert not generate_scene(spec) == generate_scene(SceneSpec(noise_sigma=0.1, seed=18))


@pytest.mark.parametrize("seed", range(5))
def test_noiseless_region_similarities(seed):
    spec = SceneSpec(height=6, width=6, num_objects=2, frames=2, object_radius_range=(1.0, 1.5), seed=seed)
    truth = generate_scene(spec)
    for t in range(spec.frames):
        feats = truth.features.data[t].reshape(36, -1)
        labels = truth.labels.labels[t].ravel()
        sims = cosine_matrix(feats, feats)
        same = labels[:, None] == labels[None, :]
        assert np.allclose(sims[same], 1.0, atol=1e-6)
        assert np.all(sims[~same] <= 1 - spec.feature_separation + 1e-6)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 10_000),
    st.integers(1, 4),
    st.booleans(),
    st.floats(0, 0.2),
)
def test_scene_invariants(seed, objects, symmetric, sigma):
    spec = SceneSpec(num_objects=objects, frames=6, seed=seed, symmetric=symmetric, noise_sigma=sigma)
    truth = generate_scene(spec)
    labels = truth.labels.labels
    # identities never change: frame labels equal the rasterized trajectories
    for t in range(spec.frames):
        for i in range(objects):
            c = np.round(truth.trajectories[i, t]) if symmetric else truth.trajectories[i, t]
            assert np.array_equal(labels[t] == i, disc_mask(spec.height, spec.width, c, truth.radii[i]))
    assert set(np.unique(labels)) <= set(range(objects)) | {BACKGROUND}
    # reflective motion keeps discs inside the grid
    r = truth.radii[:, None]
    assert np.all(truth.trajectories[..., 0] >= r - 1e-9)
    assert np.all(truth.trajectories[..., 0] <= spec.height - 1 - r + 1e-9)
    assert np.all(truth.trajectories[..., 1] <= spec.width - 1 - r + 1e-9)
    assert truth.prototypes.shape == (objects + 1, spec.dim)


def test_symmetric_objects_have_equal_area():
    truth = generate_scene(SceneSpec(num_objects=3, symmetric=True, seed=4, noise_sigma=0.1))
    for frame in truth.labels.labels:
        counts = [np.count_nonzero(frame == i) for i in range(3)]
        assert len(set(counts)) == 1
    p = truth.prototypes.astype(np.float64)
    assert np.allclose(p @ p.T, np.eye(4), atol=1e-6)


def test_overlap_flag_paints_lower_index_in_front():
    spec = SceneSpec(height=7, width=7, num_objects=2, frames=1, object_radius_range=(3, 3), allow_overlap=True)
    truth = generate_scene(spec)
    both = disc_mask(7, 7, truth.trajectories[0, 0], 3) & disc_mask(7, 7, truth.trajectories[1, 0], 3)
    assert both.any()
    assert np.all(truth.labels.labels[0][both] == 0)


def test_feature_scale():
    a = generate_scene(SceneSpec(seed=1, feature_scale=1.0))
    b = generate_scene(SceneSpec(seed=1, feature_scale=3.0))
    assert np.allclose(b.features.data, 3.0 * a.features.data, atol=1e-5)
    assert SceneSpec(dim=16).feature_scale == pytest.approx(4.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_objects=0),
        dict(frames=0),
        dict(feature_separation=0.0),
        dict(feature_separation=2.5),
        dict(height=5, object_radius_range=(3, 3)),
        dict(object_radius_range=(3, 2)),
        dict(noise_sigma=-1),
        dict(symmetric=True, dim=3, num_objects=3),
        dict(feature_scale=0.0),
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        SceneSpec(**kwargs)


def test_infeasible_prototypes_is_config_error():
    with pytest.raises(ConfigError):
        generate_scene(SceneSpec(dim=2, num_objects=5, feature_separation=1.0))
    assert max_separated_vectors(2, 1.0) == 4
    assert max_separated_vectors(5, 1.5) == 3
    with pytest.raises(ConfigError):
        sample_prototypes(np.random.default_rng(0), 4, 3, 1.5)


def test_unplaceable_objects_is_generation_error():
    spec = SceneSpec(height=7, width=7, num_objects=4, frames=1, object_radius_range=(3, 3))
    with pytest.raises(GenerationError):
        generate_scene(spec)


def test_dense_scene_uses_lattice_fallback():
    spec = SceneSpec(height=12, width=12, num_objects=4, object_radius_range=(2.9, 2.9), symmetric=True, seed=3)
    truth = generate_scene(spec)
    for frame in truth.labels.labels:
        assert [np.count_nonzero(frame == i) for i in range(4)] == [25] * 4


def test_shuffle_single_frame_keeps_image_ari():
    truth = generate_scene(SceneSpec(frames=1, seed=5))
    shuffled = shuffle_identities(truth, 0)
    assert evaluate(shuffled, truth.labels, "image").ari == 1.0


def test_shuffle_breaks_video_ari():
    truth = generate_scene(SceneSpec(frames=5, num_objects=3, seed=6))
    shuffled = shuffle_identities(truth, 1)
    assert evaluate(shuffled, truth.labels, "image").ari == 1.0
    assert evaluate(shuffled, truth.labels, "video").ari < 1.0
    assert np.array_equal(shuffled.labels == BACKGROUND, truth.labels.labels == BACKGROUND)


def test_shuffle_single_object_is_identity():
    truth = generate_scene(SceneSpec(frames=4, num_objects=1, seed=0))
    assert shuffle_identities(truth, 3) == truth.labels


def test_low_noise_peaks_inside_blobs():
    hits = 0
    for seed in range(100):
        truth = generate_scene(SceneSpec(frames=1, noise_sigma=0.05, seed=seed))
        fmap = truth.features[0]
        seeds = select_seeds(fmap, grounded_saliency(fmap, SaliencyConfig(radius=1)), 3)
        labels = truth.labels.labels[0]
        hits += all(labels[r, c] != BACKGROUND for r, c in seeds.coords)
    assert hits >= 95


def test_manifest_is_json_ready():
    import json

    spec = SceneSpec(seed=1)
    manifest = generate_scene(spec).manifest(spec)
    assert json.loads(json.dumps(manifest))["spec"]["seed"] == 1
    assert len(manifest["trajectories"]) == spec.num_objects

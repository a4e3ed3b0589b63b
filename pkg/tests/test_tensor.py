import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gcorr.tensor import (
    BACKGROUND,
    FeatureMap,
    FeatureSequence,
    FormatError,
    LabelMap,
    SegmentationSequence,
    cosine_matrix,
    cosine_similarity,
    read_bundle,
    read_tensor,
    write_bundle,
    write_tensor,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, width=32)


def test_patch_at_single_patch():
    fmap = FeatureMap.from_flat(1, 1, 2, [3.0, 4.0])
    assert fmap.patch_at(0, 0).tolist() == [3.0, 4.0]


def test_patch_at_row_major():
    fmap = FeatureMap.from_flat(2, 2, 1, [1.0, 2.0, 3.0, 4.0])
    assert fmap.patch_at(1, 0).tolist() == [3.0]


def test_patch_at_offset():
    values = np.arange(12, dtype=np.float32)
    fmap = FeatureMap.from_flat(2, 3, 2, values)
    assert fmap.patch_at(0, 2).tolist() == [4.0, 5.0]


@pytest.mark.parametrize("rc", [(-1, 0), (2, 0), (0, 3), (0, -1)])
def test_patch_at_out_of_bounds(rc):
    with pytest.raises(IndexError):
        FeatureMap(np.zeros((2, 3, 1))).patch_at(*rc)


def test_patch_at_is_read_only():
    fmap = FeatureMap(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        fmap.patch_at(0, 0)[0] = 1.0


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.data())
def test_patch_at_matches_flat_offset(h, w, d, data):
    values = np.arange(h * w * d, dtype=np.float32)
    fmap = FeatureMap.from_flat(h, w, d, values)
    r = data.draw(st.integers(0, h - 1))
    c = data.draw(st.integers(0, w - 1))
    start = (r * w + c) * d
    assert fmap.patch_at(r, c).tolist() == values[start:start + d].tolist()


def test_feature_map_validation():
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((0, 2, 1)))
    with pytest.raises(ValueError):
        FeatureMap(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        FeatureMap.from_flat(2, 2, 2, [0.0] * 7)


def test_sequence_frames_share_shape():
    a = FeatureMap(np.zeros((2, 2, 1)))
    b = FeatureMap(np.zeros((2, 3, 1)))
    with pytest.raises(ValueError):
        FeatureSequence.from_frames([a, b])
    with pytest.raises(ValueError):
        FeatureSequence.from_frames([])
    seq = FeatureSequence.from_frames([a, a])
    assert len(seq) == 2 and seq[1] == a


def test_label_map_validation():
    with pytest.raises(ValueError):
        LabelMap(np.array([[-2, 0]]))
    lm = LabelMap(np.array([[-1, 0], [0, 1]]))
    assert lm.background_count == 1
    assert lm.objects == [0, 1]
    with pytest.raises(ValueError):
        SegmentationSequence.from_frames([lm, LabelMap(np.zeros((1, 4)))])


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-6)


def test_cosine_zero_norm_is_zero():
    assert cosine_similarity([0, 0], [1, 0]) == 0.0
    assert cosine_similarity([0, 0], [0, 0]) == 0.0


def test_cosine_length_mismatch():
    with pytest.raises(ValueError):
        cosine_similarity([1, 0], [1, 0, 0])


@given(
    arrays(np.float64, 5, elements=finite),
    arrays(np.float64, 5, elements=finite),
    st.floats(1e-3, 1e3),
)
def test_cosine_symmetric_and_scale_invariant(a, b, c):
    s = cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert cosine_similarity(b, a) == pytest.approx(s, abs=1e-6)
    if np.linalg.norm(a) > 1e-3:
        assert cosine_similarity(c * a, b) == pytest.approx(s, abs=1e-6)


def test_cosine_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    m = cosine_matrix(a, b)
    for i in range(4):
        for j in range(5):
            assert m[i, j] == pytest.approx(cosine_similarity(a[i], b[j]), abs=1e-12)


def test_round_trip_feature_map(tmp_path):
    fmap = FeatureMap(np.arange(12, dtype=np.float32).reshape(2, 2, 3) + 0.25)
    write_tensor(tmp_path / "x.gct", fmap)
    back = read_tensor(tmp_path / "x.gct")
    assert isinstance(back, FeatureMap)
    assert back.data.tobytes() == fmap.data.tobytes()


def test_payload_is_little_endian_row_major(tmp_path):
    lm = LabelMap(np.array([[-1, 0], [0, 1]]))
    write_tensor(tmp_path / "l.gct", lm)
    raw = (tmp_path / "l.gct").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert b'"magic": "GCT1"' in header
    assert payload == np.array([-1, 0, 0, 1], dtype="<i4").tobytes()


def test_read_label_map_counts(tmp_path):
    write_tensor(tmp_path / "l.gct", LabelMap(np.array([[-1, 0], [0, 1]])))
    lm = read_tensor(tmp_path / "l.gct")
    assert lm.background_count == 1 and len(lm.objects) == 2


@pytest.mark.parametrize(
    "value",
    [
        FeatureSequence(np.ones((2, 3, 4, 5))),
        SegmentationSequence(np.full((3, 2, 2), BACKGROUND)),
        LabelMap(np.zeros((1, 1))),
    ],
)
def test_round_trip_kinds(tmp_path, value):
    write_tensor(tmp_path / "v.gct", value)
    back = read_tensor(tmp_path / "v.gct")
    assert type(back) is type(value) and back == value


def test_shape_payload_mismatch(tmp_path):
    p = tmp_path / "bad.gct"
    p.write_bytes(b'{"magic":"GCT1","dtype":"f32","shape":[4,4,8],"kind":"features"}\n' + bytes(400))
    with pytest.raises(FormatError, match="payload"):
        read_tensor(p)


def test_corrupted_fixtures_rejected(corrupt_files):
    for name, path in corrupt_files.items():
        with pytest.raises(FormatError):
            read_tensor(path)


def test_non_finite_reports_offset(tmp_path):
    values = np.zeros(4, dtype="<f4")
    values[2] = np.inf
    header = b'{"magic":"GCT1","dtype":"f32","shape":[1,1,4],"kind":"features"}\n'
    p = tmp_path / "inf.gct"
    p.write_bytes(header + values.tobytes())
    with pytest.raises(FormatError) as info:
        read_tensor(p)
    assert info.value.offset == len(header) + 8
    assert f"at byte {len(header) + 8}" in str(info.value)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_round_trip_property(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("rt") / "x.gct"
    write_tensor(p, FeatureMap(data))
    assert read_tensor(p).data.tobytes() == np.ascontiguousarray(data).tobytes()


def test_bundle_round_trip(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, dtype=np.float32)}
    write_bundle(tmp_path / "w.gct", tensors)
    back = read_bundle(tmp_path / "w.gct")
    assert set(back) == {"a", "b"}
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_bundle_is_not_a_tensor(tmp_path):
    write_bundle(tmp_path / "w.gct", {"a": np.ones(2)})
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "w.gct")

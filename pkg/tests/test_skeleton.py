import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from posegan.skeleton import (BODY8, MOTION_CLASSES, NormalizationStats, PoseSequence, SkeletonSpec, bone_lengths,
                              center_of_mass, compute_stats, denormalize, make_synthetic_dataset, normalize,
                              sample_training_pair, split_segments, synth_motion)


def _seq(T, J=2, start=0.0):
    return PoseSequence(np.arange(T * J * 3, dtype=float).reshape(T, J, 3) + start)


# -- SkeletonSpec -----------------------------------------------------------------

def test_body8_topology():
    assert BODY8.joint_count == 8 and len(BODY8.bones) == 7
    assert SkeletonSpec.from_dict(BODY8.to_dict()) == BODY8


@pytest.mark.parametrize("J,bones", [
    (3, ((0, 1), (1, 5))),          # out of range
    (3, ((0, 1), (0, 1))),          # duplicate
    (3, ((0, 1),)),                 # too few edges
    (4, ((0, 1), (1, 0), (2, 3))),  # duplicate reversed
    (3, ((0, 0), (1, 2))),          # self loop
])
def test_invalid_skeletons(J, bones):
    with pytest.raises(ValueError):
        SkeletonSpec(J, bones)


def test_disconnected_skeleton():
    with pytest.raises(ValueError, match="connected"):
        SkeletonSpec(4, ((0, 1), (1, 2), (2, 0)))


# -- PoseSequence ---------------------------------------------------------------

def test_pose_sequence_validation():
    with pytest.raises(ValueError):
        PoseSequence(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PoseSequence(np.zeros((0, 2, 3)))
    bad = np.zeros((2, 2, 3))
    bad[1, 1, 2] = np.nan
    with pytest.raises(ValueError, match="finite"):
        PoseSequence(bad)
    with pytest.raises(ValueError):
        _seq(3, J=2).check_skeleton(BODY8)


# -- normalization ----------------------------------------------------------------

def test_stats_hand_example():
    frames = np.zeros((2, 1, 3))
    frames[:, 0, 0] = [0.0, 2.0]
    frames[:, 0, 1] = [1.0, -1.0]
    frames[:, 0, 2] = [5.0, 7.0]
    st_ = compute_stats([PoseSequence(frames)])
    assert st_.mean[0] == 1.0 and st_.std[0] == 1.0


def test_stats_degenerate():
    with pytest.raises(ValueError, match="degenerate coordinate"):
        compute_stats([PoseSequence(np.ones((4, 2, 3)))])
    with pytest.raises(ValueError, match="degenerate coordinate"):
        compute_stats([PoseSequence(np.arange(6, dtype=float).reshape(1, 2, 3))])
    with pytest.raises(ValueError):
        NormalizationStats(np.zeros(3), np.array([1.0, 0.0, 1.0]))


def test_normalize_examples():
    stats = NormalizationStats(np.zeros(3), np.ones(3))
    assert normalize(np.full((1, 1, 3), 2.0), stats)[0, 0, 0] == 1.0
    stats = NormalizationStats(np.array([1.0, 2.0, 3.0]), np.ones(3) * 0.7)
    assert np.all(normalize(np.array([[[1.0, 2.0, 3.0]]]), stats) == 0)


@given(arrays(np.float64, (4, 3, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (3,), elements=st.floats(-2, 2)),
       arrays(np.float64, (3,), elements=st.floats(0.1, 3)))
def test_normalize_round_trip(x, mean, std):
    stats = NormalizationStats(mean, std)
    back = denormalize(normalize(PoseSequence(x), stats), stats)
    assert np.allclose(back.frames, x, atol=1e-12)


def test_normalized_dataset_has_half_unit_std():
    ds = make_synthetic_dataset(6, 2, T=20, seed=3)
    stats = compute_stats(ds)
    z = np.concatenate([normalize(c, stats).frames.reshape(-1, 3) for c in ds])
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(z.std(axis=0), 0.5, atol=1e-12)


# -- segments and pairs ------------------------------------------------------------

def test_split_segments_stride_two():
    clip = _seq(60)
    segs = split_segments(clip, 30, 2)
    assert len(segs) == 1 and len(segs[0]) == 30
    assert np.array_equal(segs[0].frames, clip.frames[0:60:2])


def test_split_segments_identity_and_short():
    clip = _seq(12)
    assert np.array_equal(split_segments(clip, 12, 1)[0].frames, clip.frames)
    assert split_segments(_seq(10), 30, 2) == []


def test_split_segments_keeps_labels():
    clip = PoseSequence(np.zeros((8, 1, 3)), label=3, subject="a")
    segs = split_segments(clip, 2, 2)
    assert len(segs) == 2 and all(s.label == 3 and s.subject == "a" for s in segs)


@given(st.integers(1, 200), st.integers(1, 20), st.integers(1, 4))
def test_split_segments_count(T, L, stride):
    segs = split_segments(_seq(T, J=1), L, stride)
    assert len(segs) == T // (L * stride)
    assert all(len(s) == L for s in segs)


def test_pair_exact_length_is_deterministic(rng):
    seg = _seq(30)
    offsets = {sample_training_pair(seg, 10, 20, rng).offset for _ in range(20)}
    assert offsets == {0}
    pair = sample_training_pair(seg, 10, 20, rng)
    assert len(pair.prior) == 10 and len(pair.future) == 20
    assert np.array_equal(np.concatenate([pair.prior.frames, pair.future.frames]), seg.frames)


def test_pair_both_offsets_observed(rng):
    seg = _seq(31)
    counts = np.bincount([sample_training_pair(seg, 10, 20, rng).offset for _ in range(10_000)], minlength=2)
    assert counts.shape == (2,) and counts.min() > 4000


def test_pair_too_short(rng):
    with pytest.raises(ValueError):
        sample_training_pair(_seq(29), 10, 20, rng)


# -- geometry ----------------------------------------------------------------------

def test_center_of_mass():
    assert np.array_equal(center_of_mass(np.array([[0, 0, 0], [2, 0, 0]], float)), [1, 0, 0])
    assert np.array_equal(center_of_mass(np.array([[1.5, -2, 3]])), [1.5, -2, 3])
    sq = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    assert np.allclose(center_of_mass(sq), [0.5, 0.5, 0])


def test_bone_lengths():
    spec = SkeletonSpec(2, ((0, 1),))
    assert bone_lengths(np.array([[0, 0, 0], [0, 3, 4]], float), spec)[0] == 5.0
    assert bone_lengths(np.zeros((2, 3)), spec)[0] == 0.0
    with pytest.raises(ValueError):
        bone_lengths(np.zeros((3, 3)), spec)


# -- synthetic motion ----------------------------------------------------------------

def test_synth_deterministic():
    a = synth_motion(2, 40, rng=np.random.default_rng(7))
    b = synth_motion(2, 40, rng=np.random.default_rng(7))
    assert np.array_equal(a.frames, b.frames) and a.label == 2


def test_synth_errors():
    with pytest.raises(ValueError):
        synth_motion(len(MOTION_CLASSES), 10)
    with pytest.raises(ValueError):
        synth_motion(0, 10, spec=SkeletonSpec(2, ((0, 1),)))


@pytest.mark.parametrize("cls", range(len(MOTION_CLASSES)))
def test_synth_bone_lengths_constant(cls):
    clip = synth_motion(cls, 80, rng=np.random.default_rng(cls))
    bl = bone_lengths(clip.frames, BODY8)
    assert np.max(np.abs(bl - bl[0])) < 1e-12


def test_synth_classes_separable():
    # mean pairwise distance between classes exceeds within-class distance (over 100 samples)
    rng = np.random.default_rng(0)

    def feats(c):
        out = []
        for _ in range(50):
            f = synth_motion(c, 40, rng=rng).frames
            f = f - f[:, :1]                   # pelvis-relative
            out.append(f.reshape(-1))
        return np.stack(out)

    a, b = feats(0), feats(1)
    d = lambda x, y: np.mean(np.linalg.norm(x[:, None] - y[None], axis=-1))
    assert d(a, b) > max(d(a, a), d(b, b))


def test_synthetic_dataset_balanced():
    ds = make_synthetic_dataset(12, 3, T=10, seed=0)
    assert [c.label for c in ds] == [0, 1, 2] * 4
    with pytest.raises(ValueError):
        make_synthetic_dataset(4, 0)

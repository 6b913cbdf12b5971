import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from posegan import ActionClassifier, MotionGAN, PoseNormalizer
from posegan.skeleton import BODY8, compute_stats, make_synthetic_dataset
from posegan.validation import check_fraction, check_labels, check_pose_array, check_sequences

from conftest import TINY


@pytest.fixture(scope="module")
def clips():
    return make_synthetic_dataset(16, 2, T=24, seed=5)


@pytest.fixture(scope="module")
def gan(clips):
    return MotionGAN(config=dict(TINY)).fit(clips)


# -- validation helpers -------------------------------------------------------------

def test_check_pose_array_shapes():
    assert check_pose_array(np.zeros((5, 8, 3))).shape == (1, 5, 8, 3)
    with pytest.raises(ValueError, match="shape"):
        check_pose_array(np.zeros((5, 8, 2)))
    with pytest.raises(ValueError, match="joints"):
        check_pose_array(np.zeros((1, 5, 7, 3)), n_joints=8)
    with pytest.raises(ValueError, match="non-finite"):
        check_pose_array(np.full((1, 2, 8, 3), np.nan))
    with pytest.raises(ValueError, match="frames"):
        check_pose_array(np.zeros((1, 1, 8, 3)), min_frames=2)


def test_check_sequences_and_labels(clips):
    arrays = [c.frames for c in clips[:3]]
    seqs = check_sequences(arrays, BODY8, y=[1, 0, 1])
    assert [s.label for s in seqs] == [1, 0, 1]
    with pytest.raises(ValueError, match="at least 2"):
        check_sequences([clips[0].frames[:1]])
    with pytest.raises(ValueError):
        check_sequences([])
    with pytest.raises(ValueError, match="labels for"):
        check_labels([0, 1], n_samples=3)
    with pytest.raises(ValueError, match="integers"):
        check_labels([0.5, 1.0])
    assert check_labels(np.array([1.0, 0.0])).dtype.kind == "i"
    with pytest.raises(ValueError):
        check_fraction(0.0)
    assert check_fraction(1.0) == 1.0


# -- PoseNormalizer -----------------------------------------------------------------

def test_normalizer_matches_stats_and_inverts(clips):
    norm = PoseNormalizer().fit(clips)
    stats = compute_stats(clips)
    np.testing.assert_array_equal(norm.mean_, stats.mean)
    X = np.stack([c.frames for c in clips])
    Z = norm.transform(X)
    np.testing.assert_allclose(Z, (X - stats.mean) / (2 * stats.std))
    np.testing.assert_allclose(norm.inverse_transform(Z), X, atol=1e-12)


def test_normalizer_requires_fit():
    with pytest.raises(NotFittedError, match="not fitted"):
        PoseNormalizer().transform(np.zeros((1, 3, 8, 3)))


# -- MotionGAN ----------------------------------------------------------------------

def test_params_and_clone():
    est = MotionGAN(config={"epochs": 3}, use_best=False)
    params = est.get_params()
    assert params["config"] == {"epochs": 3} and params["use_best"] is False
    twin = clone(est)
    assert twin.get_params()["config"] == {"epochs": 3} and twin is not est
    assert not hasattr(twin, "generator_")


def test_bad_config_type():
    with pytest.raises(TypeError):
        MotionGAN(config=3).fit(make_synthetic_dataset(4, 2, T=24))


def test_gan_fit_predict_shapes(gan, clips):
    assert len(gan.history_) > 0 and gan.k_best_ >= 0
    prior = np.stack([c.frames[:8:2] for c in clips[:3]])
    out = gan.predict(prior, samples=2, horizon=5, seed=1)
    assert out.shape == (2, 3, 5, 8, 3)
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out, gan.predict(prior, samples=2, horizon=5, seed=1))
    assert gan.predict(prior[0]).shape == (1, 1, TINY["n"], 8, 3)


def test_gan_scores_are_probabilities(gan, clips):
    seq = np.stack([c.frames[:20:2] for c in clips[:4]])
    q = gan.score_quality(seq)
    d = gan.discriminate(seq)
    assert q.shape == (4,) and d.shape == (4,)
    assert np.all((q > 0) & (q < 1)) and np.all((d > 0) & (d < 1))


def test_gan_save_load(gan, clips, tmp_path):
    gan.save(tmp_path / "g.ckpt")
    back = MotionGAN.load(tmp_path / "g.ckpt")
    prior = np.stack([c.frames[:8:2] for c in clips[:2]])
    np.testing.assert_array_equal(back.predict(prior, samples=3, seed=4), gan.predict(prior, samples=3, seed=4))


def test_gan_predict_validation(gan):
    with pytest.raises(ValueError, match="joints"):
        gan.predict(np.zeros((1, 4, 5, 3)))
    with pytest.raises(ValueError, match="samples"):
        gan.predict(np.zeros((1, 4, 8, 3)), samples=0)
    with pytest.raises(NotFittedError, match="not fitted"):
        MotionGAN().predict(np.zeros((1, 4, 8, 3)))


# -- ActionClassifier ---------------------------------------------------------------

def test_classifier_scratch_fit_predict(clips):
    X = [c.frames for c in clips]
    y = [c.label for c in clips]
    clf = ActionClassifier(config=dict(TINY), seed=0).fit(X, y)
    proba = clf.predict_proba(X[:5])
    assert proba.shape == (5, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(clf.predict(X)) <= {0, 1}
    assert len(clf.train_accuracy_) == TINY["cls_epochs"] and clf.test_accuracy_ == []
    assert 0.0 <= clf.score(X, y) <= 1.0


def test_classifier_pretrained_from_gan(gan, clips):
    train, test = clips[:12], clips[12:]
    clf = ActionClassifier(config=dict(TINY), init="pretrained", pretrained=gan, seed=0)
    clf.fit(train, X_test=test)
    assert len(clf.test_accuracy_) == TINY["cls_epochs"]
    np.testing.assert_array_equal(clf.stats_.mean, gan.stats_.mean)


def test_classifier_errors(clips):
    with pytest.raises(ValueError, match="label"):
        ActionClassifier(config=dict(TINY)).fit([c.frames for c in clips])
    with pytest.raises(ValueError, match="pretrained"):
        ActionClassifier(config=dict(TINY), init="pretrained").fit(clips)
    with pytest.raises(TypeError):
        ActionClassifier(config=dict(TINY), init="pretrained", pretrained="x").fit(clips)
    with pytest.raises(NotFittedError):
        ActionClassifier().predict(clips)

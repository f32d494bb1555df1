import numpy as np
import pytest
from app.errors import DimensionMismatch, FormatError, InsufficientData
from verification.wd_svm import (
    LinearSvm,
    RbfSvm,
    assemble_wd_trainset,
    decode_svm,
    encode_svm,
    grad_wrt_features,
    is_genuine,
    load_svm,
    normalized_score,
    save_svm,
    train_linear,
    train_rbf,
)


def clustered_features(users=4, per_user=6, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 3.0, size=(users, dim))
    return {u: centers[u] + rng.normal(0.0, 0.3, size=(per_user, dim)) for u in range(users)}


def finite_difference(model, phi, h=1e-5):
    grad = np.zeros_like(phi)
    for i in range(len(phi)):
        step = np.zeros_like(phi)
        step[i] = h
        grad[i] = (model.score(phi + step) - model.score(phi - step)) / (2 * h)
    return grad


def test_acceptance_rule_is_inclusive():
    assert is_genuine(0.0)
    assert not is_genuine(-1e-12)


def test_trainset_takes_first_samples_per_user():
    feats = clustered_features()
    ts = assemble_wd_trainset(feats, target_user=1, per_user=4)
    np.testing.assert_array_equal(ts.positives, feats[1][:4])
    assert ts.negatives.shape == (12, 5)
    x, y = ts.xy()
    assert (y == 1).sum() == 4 and (y == -1).sum() == 12


def test_trainset_with_seed_is_reproducible():
    feats = clustered_features()
    a = assemble_wd_trainset(feats, 0, per_user=3, seed=5)
    b = assemble_wd_trainset(feats, 0, per_user=3, seed=5)
    np.testing.assert_array_equal(a.negatives, b.negatives)


def test_trainset_needs_enough_samples_and_users():
    feats = clustered_features(per_user=2)
    with pytest.raises(InsufficientData):
        assemble_wd_trainset(feats, 0, per_user=3)
    with pytest.raises(InsufficientData):
        assemble_wd_trainset({0: feats[0]}, 0, per_user=2)


def test_linear_svm_separates_users_and_gradient_is_w():
    feats = clustered_features()
    model = train_linear(assemble_wd_trainset(feats, 2, per_user=6))
    assert np.all(model.score_batch(feats[2]) > 0)
    assert np.all(model.score_batch(np.vstack([feats[u] for u in (0, 1, 3)])) < 0)
    np.testing.assert_allclose(grad_wrt_features(model, feats[2][0]), model.w)


@pytest.mark.parametrize("squared", [True, False])
def test_rbf_gradient_matches_finite_differences(squared):
    feats = clustered_features()
    model = train_rbf(assemble_wd_trainset(feats, 0, per_user=6), gamma=0.05, squared=squared)
    assert model.score(feats[0][0]) > 0
    phi = feats[0][0] + 0.7
    np.testing.assert_allclose(model.gradient(phi), finite_difference(model, phi), rtol=1e-4, atol=1e-7)


def test_rbf_gradient_at_a_support_vector_is_finite_for_unsquared_kernel():
    model = RbfSvm(support_vectors=np.array([[0.0, 0.0], [1.0, 1.0]]), alphas=np.array([1.0, -1.0]),
                   gamma=0.5, b=0.0, squared=False)
    assert np.all(np.isfinite(model.gradient(np.array([0.0, 0.0]))))


def test_dimension_mismatch():
    model = LinearSvm(w=np.ones(3), b=0.0)
    with pytest.raises(DimensionMismatch):
        model.score(np.ones(4))


def test_normalized_score_subtracts_threshold():
    model = LinearSvm(w=np.array([1.0, 2.0]), b=0.5)
    assert normalized_score(model, 1.0, np.array([1.0, 1.0])) == pytest.approx(2.5)


def test_serialized_models_score_like_the_originals(tmp_path):
    feats = clustered_features()
    ts = assemble_wd_trainset(feats, 3, per_user=6)
    for model in (train_linear(ts), train_rbf(ts, gamma=0.05)):
        path = save_svm(model, str(tmp_path / f"{model.kind}.svm"))
        loaded = load_svm(path)
        assert type(loaded) is type(model)
        np.testing.assert_allclose(loaded.score_batch(feats[3]), model.score_batch(feats[3]), rtol=1e-4, atol=1e-4)


def test_decode_rejects_unknown_payloads():
    with pytest.raises(FormatError):
        decode_svm(b"NOPE")
    with pytest.raises(FormatError):
        decode_svm(b"SVM1X" + encode_svm(LinearSvm(w=np.ones(2), b=0.0))[5:])

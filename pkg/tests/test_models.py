import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stateguard.featurespace import (
    BENIGN,
    MALWARE,
    Dataset,
    FeatureFamilyTable,
    FeatureVector,
    validate_perturbations,
)
from stateguard.models import (
    DenseNet,
    EnsembleModel,
    LogisticModel,
    MLPClassifier,
    TrainingError,
    TrainingMeta,
    accuracy,
    adversarial_quota,
    adversarially_train,
    distill,
    ensemble_predict,
    ensemble_vote,
    finite_difference_check,
    fit_logistic,
    fit_mlp,
    model_from_json,
    model_to_json,
    one_hot,
    reconstruction_loss,
    train_autoencoder,
    train_logistic,
    train_mlp,
    transferability_generate,
)
from stateguard.models.autoencoder import Autoencoder
from stateguard.models.classifiers import as_matrix
from stateguard.models.nn import softmax


def toy_dataset(n=40):
    """Two well separated clusters in 4 binary features."""
    vecs, labels, splits = [], [], []
    for i in range(n):
        y = i % 2
        base = [0, 1] if y == 0 else [2, 3]
        vecs.append(FeatureVector(4, base))
        labels.append(y)
        splits.append("validation" if i >= n - 10 else "train")
    return Dataset(4, vecs, np.array(labels), np.array(splits))


class Constant:
    def __init__(self, label):
        self.label = label

    def predict_label(self, x):
        n = as_matrix(x).shape[0]
        return np.full(n, self.label) if n > 1 or isinstance(x, list) else self.label

    def predict_proba(self, x):
        return float(self.label)


# MLP training

def test_separable_toy_reaches_full_accuracy():
    ds = toy_dataset()
    model = train_mlp(ds, [4, 8, 2], TrainingMeta(epochs=50, learning_rate=0.1), seed=0)
    assert model.validation_accuracy == 1.0


def test_zero_epochs_is_initialisation():
    ds = toy_dataset()
    model = train_mlp(ds, [4, 8, 2], TrainingMeta(epochs=0), seed=7)
    init = DenseNet.init([4, 8, 2], np.random.default_rng(7))
    for a, b in zip(model.net.weights, init.weights):
        assert np.array_equal(a, b)


def test_training_deterministic(small_data):
    ds, _ = small_data
    a = train_mlp(ds, [ds.dim, 16, 2], TrainingMeta(epochs=3), seed=5)
    b = train_mlp(ds, [ds.dim, 16, 2], TrainingMeta(epochs=3), seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.net.weights, b.net.weights))


def test_single_class_training_rejected():
    ds = toy_dataset()
    one = Dataset(4, ds.vectors, np.zeros(len(ds.vectors), dtype=int), ds.splits)
    with pytest.raises(TrainingError):
        train_mlp(one, [4, 2])
    with pytest.raises(TrainingError):
        train_logistic(one)


# gradients

def test_finite_differences_on_trained_mlp(small_data, small_mlp):
    ds, _ = small_data
    X, y = ds.matrix("validation")
    err = finite_difference_check(small_mlp.net, X[:20], one_hot(y[:20]), epsilon=1e-4, n_weights=80)
    assert err < 1e-3


def test_finite_differences_on_autoencoder(small_data, small_ae):
    ds, _ = small_data
    X, _ = ds.matrix("test")
    assert finite_difference_check(small_ae.net, X[:10], X[:10], epsilon=1e-4) < 1e-3


def test_linear_softmax_gradient_closed_form():
    rng = np.random.default_rng(1)
    net = DenseNet.init([5, 2], rng)
    X = rng.random((12, 5))
    Y = one_hot(rng.integers(0, 2, 12))
    gW, gb = net.gradients(X, Y)
    resid = softmax(X @ net.weights[0] + net.biases[0]) - Y
    assert np.allclose(gW[0], X.T @ resid / 12, atol=1e-8, rtol=0)
    assert np.allclose(gb[0], resid.mean(axis=0), atol=1e-8, rtol=0)


def test_zero_model_bias_gradient_is_softmax_residual():
    net = DenseNet([3, 4, 2], [np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    Y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    _, gb = net.gradients(np.zeros((3, 3)), Y)
    assert np.allclose(gb[-1], (np.full((3, 2), 0.5) - Y).mean(axis=0), atol=1e-12)


def test_fd_epsilon_range():
    net = DenseNet.init([2, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        finite_difference_check(net, np.zeros((1, 2)), np.array([[1.0, 0.0]]), epsilon=0.1)


@given(st.integers(0, 10_000))
def test_softmax_outputs_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    net = DenseNet.init([16, 8, 2], rng)
    out = net.forward(rng.random((5, 16)) * rng.choice([1, 100]))
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(out >= 0)


def test_predict_label_matches_proba(small_data, small_mlp):
    ds, _ = small_data
    X, _ = ds.matrix("test")
    assert np.array_equal(small_mlp.predict_label(X), (small_mlp.predict_proba(X) >= 0.5).astype(int))


# logistic

def test_logistic_symmetric_intercept_near_zero():
    X = np.array([[1.0], [-1.0], [2.0], [-2.0]])
    y = np.array([1, 0, 1, 0])
    m = fit_logistic(X, y)
    assert abs(m.intercept) < 1e-6
    assert m.coef[0] > 0


def test_logistic_sign_and_duplication():
    X = np.array([[0.0], [0.1], [0.9], [1.0], [0.45], [0.6]])
    y = np.array([1, 1, 0, 0, 1, 0])
    m = fit_logistic(X, y)
    assert m.coef[0] < 0
    m2 = fit_logistic(np.vstack([X, X]), np.concatenate([y, y]))
    assert -m.intercept / m.coef[0] == pytest.approx(-m2.intercept / m2.coef[0], rel=1e-5)


# autoencoder

def test_autoencoder_closed_form_at_zero():
    sizes = [6, 3, 6]
    net = DenseNet(sizes, [np.zeros((6, 3)), np.zeros((3, 6))], [np.zeros(3), np.zeros(6)], output="sigmoid")
    ae = Autoencoder(net)
    assert reconstruction_loss(ae, FeatureVector(6, [])) == 0.25


def test_autoencoder_separates_in_distribution(small_data, small_ae):
    ds, _ = small_data
    held = ds.select("test")
    rng = np.random.default_rng(0)
    density = np.mean([v.enabled_count for v in held]) / ds.dim
    rand = [FeatureVector(ds.dim, np.flatnonzero(rng.random(ds.dim) < density)) for _ in range(len(held))]
    assert small_ae.losses(held).mean() < small_ae.losses(rand).mean()
    assert np.all(small_ae.losses(held) >= 0)


def test_autoencoder_deterministic_and_shape_checks(small_data):
    ds, _ = small_data
    train = ds.select("train")[:60]
    a = train_autoencoder(train, [16], TrainingMeta(epochs=2), seed=3)
    b = train_autoencoder(train, [16], TrainingMeta(epochs=2), seed=3)
    assert np.array_equal(a.losses(train), b.losses(train))
    assert a.reconstruct(train[:1]).shape == (1, ds.dim)
    with pytest.raises(ValueError):
        train_autoencoder(train, [ds.dim])


# robustness variants

def test_adversarial_quota_examples():
    assert adversarial_quota(1000, 400, 0.25) == 250
    assert adversarial_quota(1000, 100, 0.25) == 100
    with pytest.raises(ValueError):
        adversarial_quota(1000, 100, 0.0)


def test_adversarial_training_with_empty_pool_warns(small_data):
    ds, _ = small_data
    with pytest.warns(RuntimeWarning):
        m = adversarially_train(ds, [], 0.25, [ds.dim, 8, 2], TrainingMeta(epochs=1))
    assert m.notes


def test_adversarial_training_lowers_transfer_evasion(small_data, small_mlp):
    ds, table = small_data
    sub = train_mlp(ds, [ds.dim, 24, 2], TrainingMeta(epochs=15), seed=9)
    train_pool = transferability_generate(sub, ds.select("train", MALWARE), table)
    test_pool = transferability_generate(sub, ds.select("test", MALWARE), table)
    assert test_pool
    hardened = adversarially_train(ds, train_pool, 0.25, [ds.dim, 32, 16, 2], TrainingMeta(epochs=15), seed=1)

    def evasion(model):
        return float(np.mean(model.predict_label(as_matrix(test_pool)) == BENIGN))

    assert evasion(hardened) < evasion(small_mlp)


def test_distillation_agreement_matched_architecture(small_data, small_mlp):
    ds, _ = small_data
    X, _ = ds.matrix("validation")
    for T in (1.0, 20.0):
        student = distill(small_mlp, ds, T, meta=TrainingMeta(epochs=30), seed=4)
        agree = np.mean(student.predict_label(X) == small_mlp.predict_label(X))
        assert agree >= 0.95


def test_distillation_softens_targets(small_data, small_mlp):
    ds, _ = small_data
    X, _ = ds.matrix("validation")
    conf = {}
    for T in (1.0, 20.0):
        student = distill(small_mlp, ds, T, meta=TrainingMeta(epochs=15), seed=4)
        net = student.net.copy()
        net.temperature = T
        conf[T] = net.forward(X).max(axis=1).mean()
    assert conf[20.0] < conf[1.0]
    with pytest.raises(ValueError):
        distill(small_mlp, ds, 0.0)


def test_distilling_one_hot_teacher_matches_vanilla():
    ds = toy_dataset()
    meta = TrainingMeta(epochs=40, learning_rate=0.1)
    X, y = ds.matrix("train")

    teacher = train_mlp(ds, [4, 8, 2], meta, seed=0)
    # a teacher whose tempered output is exactly one-hot: targets equal the labels
    hard = fit_mlp(X, one_hot(y), [4, 8, 2], TrainingMeta(**{**meta.to_json(), "seed": 3}))
    soft_targets = one_hot(teacher.predict_label(X))
    soft = fit_mlp(X, soft_targets, [4, 8, 2], TrainingMeta(**{**meta.to_json(), "seed": 3}))
    assert np.array_equal(teacher.predict_label(X), y)
    assert all(np.array_equal(a, b) for a, b in zip(hard.net.weights, soft.net.weights))


# ensembles

def test_vote_examples():
    assert ensemble_vote(np.array([[1, 1, 0]]), "majority")[0] == 1
    assert ensemble_vote(np.array([[0, 0, 1]]), "veto")[0] == 1
    for mode in ("majority", "veto"):
        assert ensemble_vote(np.array([[0, 0, 0]]), mode)[0] == 0


@given(st.lists(st.integers(0, 1), min_size=3, max_size=9).filter(lambda v: len(v) % 2 == 1), st.randoms())
def test_votes_invariant_to_member_order(votes, rnd):
    shuffled = list(votes)
    rnd.shuffle(shuffled)
    for mode in ("majority", "veto"):
        assert ensemble_vote(np.array([votes]), mode)[0] == ensemble_vote(np.array([shuffled]), mode)[0]


def test_ensemble_membership_rules():
    c = [Constant(0), Constant(0), Constant(1)]
    with pytest.raises(ValueError):
        EnsembleModel(c[:2], "majority")
    with pytest.raises(ValueError):
        EnsembleModel(c[:1], "veto")
    v = FeatureVector(4, [1])
    assert ensemble_predict(EnsembleModel(c, "majority"), v) == 0
    assert ensemble_predict(EnsembleModel(c, "veto"), v) == 1


# transferability

def test_transferability_constant_substitute_emits_nothing(small_data):
    ds, table = small_data
    sub = MLPClassifier(DenseNet([ds.dim, 2], [np.zeros((ds.dim, 2))], [np.array([0.0, 5.0])]))
    assert transferability_generate(sub, ds.select("test", MALWARE)[:10], table) == []


@pytest.mark.parametrize("add_only", [False, True])
def test_transferability_outputs_are_valid_and_evasive(small_data, add_only):
    ds, _ = small_data
    table = FeatureFamilyTable.round_robin(ds.dim, add_only=add_only)
    sub = train_mlp(ds, [ds.dim, 24, 2], TrainingMeta(epochs=10), seed=9)
    malware = ds.select("test", MALWARE)
    out = transferability_generate(sub, malware, table)
    assert out
    for adv in out:
        assert sub.predict_label(adv) == BENIGN
    # each emitted vector must be a valid perturbation of some original
    for adv in out:
        assert any(validate_perturbations(x, adv, table) == adv
                   and (not add_only or set(x.enabled) <= set(adv.enabled)) for x in malware)


# persistence

def test_model_json_roundtrip(small_data, small_mlp, small_ae):
    ds, _ = small_data
    X, _ = ds.matrix("test")
    for model in (small_mlp, LogisticModel(np.arange(ds.dim) / ds.dim - 0.5, 0.1),
                  EnsembleModel([small_mlp, small_mlp, small_mlp], "majority")):
        back = model_from_json(model_to_json(model))
        assert np.array_equal(back.predict_proba(X), model.predict_proba(X))
    ae = model_from_json(model_to_json(small_ae))
    assert np.array_equal(ae.losses(X), small_ae.losses(X))
    obj = model_to_json(small_mlp)
    assert set(obj) >= {"kind", "layer_sizes", "weights", "training_meta"}
    assert accuracy(small_mlp, X, ds.matrix("test")[1]) > 0.9

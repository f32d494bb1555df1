import numpy as np
import pytest
from app.errors import ConfigError, DimensionMismatch, FormatError, InsufficientData
from app.models import DefenseKind, TrainConfig
from nets.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from nets.signet import (
    ConstantObjective,
    CrossEntropyObjective,
    EmbeddingObjective,
    LogitObjective,
    NetSpec,
    TrainedNet,
    conv,
    embed_batch,
    forward,
    fully_connected,
    input_gradient,
    loss_and_param_gradients,
    max_pool,
    mini_signet,
    relu,
    softmax_head,
)
from nets.trainer import LabeledImages, fgm_delta, pgd_batch, pgd_l2, train_classifier, train_ens_adv, train_madry

SMALL = (1, 20, 24)


def small_spec(classes: int = 2, name: str = "small") -> NetSpec:
    layers = (conv(2, 3, 1, 1), relu(), max_pool(2, 2), fully_connected(6), relu(), softmax_head(classes))
    return NetSpec(name=name, input_shape=SMALL, layers=layers, embedding_layer=4)


def small_net(seed: int = 0, classes: int = 2) -> TrainedNet:
    spec = small_spec(classes)
    return TrainedNet(spec=spec, params=spec.init_params(np.random.default_rng(seed)))


def two_user_images(per_user: int = 8, seed: int = 0) -> LabeledImages:
    """User 10 writes in the top half, user 20 in the bottom half."""
    rng = np.random.default_rng(seed)
    images = np.zeros((2 * per_user,) + SMALL[1:])
    images[:per_user, 2:8, 4:20] = 200.0
    images[per_user:, 12:18, 4:20] = 200.0
    images += rng.uniform(0.0, 20.0, size=images.shape)
    return LabeledImages(images=images, users=[10] * per_user + [20] * per_user)


def quick_config(defense: DefenseKind = DefenseKind.NONE, **extra) -> TrainConfig:
    return TrainConfig(epochs=6, batch_size=4, learning_rate=0.05, defense=defense, seed=1, **extra)


def test_mini_signet_shapes():
    spec = mini_signet(5, embedding=32)
    shapes = spec.shapes()
    assert shapes[spec.embedding_layer] == (32,)
    assert shapes[-1] == (5,)


def test_spec_requires_a_single_final_head():
    with pytest.raises(ValueError):
        NetSpec(name="bad", input_shape=SMALL, layers=(softmax_head(2), relu()), embedding_layer=0)


def test_params_must_match_spec():
    spec = small_spec()
    params = spec.init_params(np.random.default_rng(0))
    params[0]["W"] = np.zeros((1, 1, 3, 3))
    with pytest.raises(DimensionMismatch):
        TrainedNet(spec=spec, params=params)


def test_wrong_input_size_is_rejected():
    with pytest.raises(DimensionMismatch):
        forward(small_net(), np.zeros((10, 10)))


def test_input_gradient_matches_finite_differences():
    net = small_net(seed=3)
    img = np.random.default_rng(4).uniform(20.0, 230.0, size=SMALL[1:])
    grad = input_gradient(net, img, LogitObjective(1))
    h = 1e-3
    for r, c in [(3, 5), (10, 12), (17, 20)]:
        up, down = img.copy(), img.copy()
        up[r, c] += h
        down[r, c] -= h
        numeric = (forward(net, up)[0][1] - forward(net, down)[0][1]) / (2 * h)
        assert grad[r, c] == pytest.approx(numeric, rel=1e-3, abs=1e-8)


def test_embedding_objective_chains_through_a_linear_head():
    net = small_net(seed=5)
    img = np.random.default_rng(6).uniform(20.0, 230.0, size=SMALL[1:])
    w = np.linspace(-1.0, 1.0, 6)
    grad = input_gradient(net, img, EmbeddingObjective(lambda phi: (float(w @ phi), w)))
    h = 1e-3
    up, down = img.copy(), img.copy()
    up[9, 9] += h
    down[9, 9] -= h
    numeric = (w @ embed_batch(net, up)[0] - w @ embed_batch(net, down)[0]) / (2 * h)
    assert grad[9, 9] == pytest.approx(numeric, rel=1e-3, abs=1e-8)


def test_param_gradient_matches_finite_differences():
    net = small_net(seed=7)
    data = two_user_images(per_user=2)
    labels = data.labels()
    _, grads, _ = loss_and_param_gradients(net.params, net, data.images, labels)
    h = 1e-6
    for i, key, index in [(3, "W", (2, 7)), (5, "b", (1,)), (0, "W", (1, 0, 1, 1))]:
        params = [{k: v.copy() for k, v in p.items()} for p in net.params]
        params[i][key][index] += h
        up, _, _ = loss_and_param_gradients(params, net, data.images, labels)
        params[i][key][index] -= 2 * h
        down, _, _ = loss_and_param_gradients(params, net, data.images, labels)
        assert grads[i][key][index] == pytest.approx((up - down) / (2 * h), rel=1e-3, abs=1e-8)


def random_net(rng: np.random.Generator) -> TrainedNet:
    classes = int(rng.integers(2, 5))
    layers = (conv(int(rng.integers(1, 4)), 3, 1, int(rng.integers(0, 2))), relu(), max_pool(2, 2),
              fully_connected(int(rng.integers(3, 9))), relu(), softmax_head(classes))
    spec = NetSpec(name="random", input_shape=SMALL, layers=layers, embedding_layer=4)
    return TrainedNet(spec=spec, params=spec.init_params(rng))


@pytest.mark.parametrize("seed", range(10))
def test_random_nets_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    net = random_net(rng)
    classes = net.class_count

    img = rng.uniform(20.0, 230.0, size=SMALL[1:])
    target = int(rng.integers(classes))
    grad = input_gradient(net, img, LogitObjective(target))
    h = 1e-4
    for _ in range(5):
        r, c = int(rng.integers(SMALL[1])), int(rng.integers(SMALL[2]))
        up, down = img.copy(), img.copy()
        up[r, c] += h
        down[r, c] -= h
        numeric = (forward(net, up)[0][target] - forward(net, down)[0][target]) / (2 * h)
        assert grad[r, c] == pytest.approx(numeric, rel=1e-3, abs=1e-7)

    images = rng.uniform(20.0, 230.0, size=(3,) + SMALL[1:])
    labels = rng.integers(classes, size=3)
    _, grads, _ = loss_and_param_gradients(net.params, net, images, labels)
    h = 1e-6
    for i, layer_params in enumerate(net.params):
        for key, value in layer_params.items():
            index = tuple(int(rng.integers(n)) for n in value.shape)
            params = [{k: v.copy() for k, v in p.items()} for p in net.params]
            params[i][key][index] += h
            up, _, _ = loss_and_param_gradients(params, net, images, labels)
            params[i][key][index] -= 2 * h
            down, _, _ = loss_and_param_gradients(params, net, images, labels)
            assert grads[i][key][index] == pytest.approx((up - down) / (2 * h), rel=1e-3, abs=1e-7)


def test_fgm_delta_has_the_requested_norm():
    g = np.array([[3.0, 4.0]])
    np.testing.assert_allclose(fgm_delta(g, 10.0), [[6.0, 8.0]])


def test_fgm_delta_norm_on_random_gradients():
    rng = np.random.default_rng(12)
    for _ in range(100):
        g = rng.normal(size=SMALL[1:]) * rng.uniform(1e-3, 1e3)
        epsilon = rng.uniform(0.1, 2000.0)
        assert np.linalg.norm(fgm_delta(g, epsilon)) == pytest.approx(epsilon, rel=1e-9)


def test_pgd_stays_in_the_ball_and_the_box():
    net = small_net(seed=2)
    img = two_user_images().images[0]
    adv = pgd_l2(net, img, label=0, epsilon=30.0, steps=5, step_size=10.0)
    assert np.linalg.norm(adv - img) <= 30.0 + 1e-9
    assert adv.min() >= 0.0 and adv.max() <= 255.0


def test_pgd_starts_from_the_clean_image_unless_the_gradient_vanishes():
    net = small_net(seed=2)
    img = two_user_images().images[0]
    a = pgd_batch(net, img, 30.0, 3, 10.0, CrossEntropyObjective([0]), rng=np.random.default_rng(1))
    b = pgd_batch(net, img, 30.0, 3, 10.0, CrossEntropyObjective([0]), rng=np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)

    flat_img = np.full(SMALL[1:], 120.0)
    moved = pgd_batch(net, flat_img, 5.0, 2, 1.0, ConstantObjective(), rng=np.random.default_rng(3))[0]
    assert np.linalg.norm(moved - flat_img) == pytest.approx(5.0)


def test_classifier_training_learns_two_users():
    data = two_user_images()
    net = train_classifier(small_spec(), data, quick_config())
    assert net.training_users == (10, 20)
    assert net.metadata["defense"] == "none"
    assert net.metadata["train_accuracy"] >= 0.75
    assert len(net.metadata["history"]["epochs"]) == 6


def test_training_is_deterministic():
    data = two_user_images()
    a = train_classifier(small_spec(), data, quick_config())
    b = train_classifier(small_spec(), data, quick_config())
    np.testing.assert_array_equal(a.params[0]["W"], b.params[0]["W"])


def test_training_needs_two_users_and_matching_head():
    data = two_user_images()
    one_user = LabeledImages(images=data.images[:4], users=[10] * 4)
    with pytest.raises(InsufficientData):
        train_classifier(small_spec(1), one_user, quick_config())
    with pytest.raises(ConfigError):
        train_classifier(small_spec(3), data, quick_config())


def test_ens_adv_records_epsilon_and_components():
    data = two_user_images()
    aux = train_classifier(small_spec(), data, quick_config())
    config = quick_config(DefenseKind.ENS_ADV, ens_adv={"alpha": 0.5, "epsilon": 3.0})
    net = train_ens_adv(small_spec(), data, config, [aux])
    assert net.metadata["epsilon"] == 3.0
    batch = net.metadata["history"]["batches"][0]
    assert batch["combined"] == pytest.approx(0.5 * batch["clean"] + 0.5 * batch["adversarial"])
    with pytest.raises(ConfigError):
        train_ens_adv(small_spec(), data, config, [])


def test_madry_records_epsilon():
    config = quick_config(DefenseKind.MADRY, madry={"epsilon": 2.0, "pgd_steps": 2})
    net = train_madry(small_spec(), two_user_images(), config)
    assert net.metadata["defense"] == "madry"
    assert net.metadata["epsilon"] == 2.0


def test_checkpoint_preserves_forward_pass(tmp_path):
    net = train_classifier(small_spec(), two_user_images(), quick_config())
    loaded = load_checkpoint(save_checkpoint(net, str(tmp_path / "net.sgn")))
    img = two_user_images().images[3]
    np.testing.assert_allclose(forward(loaded, img)[0], forward(net, img)[0], rtol=1e-4, atol=1e-4)
    assert loaded.training_users == net.training_users
    assert loaded.metadata["defense"] == "none"
    assert loaded.spec == net.spec


def test_checkpoint_rejects_corruption():
    buf = encode_checkpoint(small_net())
    with pytest.raises(FormatError):
        decode_checkpoint(b"XXXX" + buf[4:])
    with pytest.raises(FormatError):
        decode_checkpoint(buf[:-10])

import numpy as np
import pytest

from lutq.core.tensor import make_rng
from lutq.data_models import Activation, BatchNormMode, QuantizerConfig
from lutq.errors import StateError
from lutq.nn.layers import AffineLayer, BatchNormLayer
from lutq.nn.losses import softmax, softmax_cross_entropy
from lutq.nn.network import Network, backward_ste, build_mlp, forward
from lutq.quantizers.dictionary import AssignmentTensor, Dictionary, QuantizedWeight


def _float_copy(net: Network) -> Network:
    """Same architecture with the quantized weights ``Q`` as plain float weights."""
    layers = []
    for layer in net.layers:
        layers.append(
            AffineLayer(
                w_full=np.array(layer.effective_weight),
                bias=layer.bias.copy(),
                activation=layer.activation,
                name=layer.name,
            )
        )
    return Network(layers)


def _loss(net, x, y):
    logits, _ = net.forward(x, training=True)
    return softmax_cross_entropy(logits, y)[0]


def test_scalar_ste_gradient_ignores_distance_to_q():
    q, x, t = 0.5, 3.0, 1.0
    qw = QuantizedWeight.build(Dictionary(values=[q]), AssignmentTensor([[1]]))
    layer = AffineLayer(w_full=np.array([[5.0]]), bias=np.zeros(1), qcfg=QuantizerConfig(k=1), qweight=qw)
    net = Network([layer])
    y, caches = forward(net, np.array([[x]]), training=True)
    # gradient of ½(y − t)²
    grad = y - t
    grads = backward_ste(net, grad, caches)
    assert grads[0]["w_full"].tolist() == [[(q * x - t) * x]]


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(21)
    net = build_mlp(5, [8], 3, make_rng(21), qcfg=QuantizerConfig(k=4))
    x = rng.normal(size=(16, 5))
    y = rng.integers(0, 3, size=16)

    logits, caches = net.forward(x, training=True)
    _, loss_grad = softmax_cross_entropy(logits, y)
    grads = net.backward(loss_grad, caches)

    reference = _float_copy(net)
    h = 1e-6
    for _ in range(100):
        index = int(rng.integers(0, 2))
        weight = reference.layers[index].w_full
        i, j = int(rng.integers(0, weight.shape[0])), int(rng.integers(0, weight.shape[1]))
        original = weight[i, j]
        weight[i, j] = original + h
        up = _loss(reference, x, y)
        weight[i, j] = original - h
        down = _loss(reference, x, y)
        weight[i, j] = original
        numeric = (up - down) / (2 * h)
        assert grads[index]["w_full"][i, j] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_accumulator_gradient_is_bit_identical_to_q_gradient():
    rng = np.random.default_rng(22)
    net = build_mlp(4, [6], 2, make_rng(22), qcfg=QuantizerConfig(k=2))
    x = rng.normal(size=(8, 4))
    y = rng.integers(0, 2, size=8)
    reference = _float_copy(net)

    logits, caches = net.forward(x, training=True)
    ref_logits, ref_caches = reference.forward(x, training=True)
    assert np.array_equal(logits, ref_logits)
    grads = net.backward(softmax_cross_entropy(logits, y)[1], caches)
    ref_grads = reference.backward(softmax_cross_entropy(ref_logits, y)[1], ref_caches)
    for ours, theirs in zip(grads, ref_grads):
        assert np.array_equal(ours["w_full"], theirs["w_full"])
        assert np.array_equal(ours["bias"], theirs["bias"])


def test_zero_loss_gradient_gives_zero_gradients():
    net = build_mlp(3, [4], 2, make_rng(0), qcfg=QuantizerConfig(k=2), batchnorm=BatchNormMode.TRADITIONAL)
    logits, caches = net.forward(np.ones((4, 3)) * np.arange(4)[:, None], training=True)
    grads = net.backward(np.zeros_like(logits), caches)
    for layer_grads in grads:
        for grad in layer_grads.values():
            assert not np.any(grad)


def test_backward_without_intermediates():
    net = build_mlp(3, [4], 2, make_rng(0))
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 2)), None)
    with pytest.raises(StateError):
        net.backward(np.zeros((1, 2)), [])


@pytest.mark.parametrize("mode", [BatchNormMode.TRADITIONAL, BatchNormMode.MULTIPLIER_LESS])
def test_batchnorm_training_input_gradient(mode):
    rng = np.random.default_rng(23)
    features = 4
    layer = BatchNormLayer(
        gamma=rng.uniform(0.5, 2.0, size=features),
        beta=rng.normal(size=features),
        running_mean=np.zeros(features),
        running_var=rng.uniform(0.5, 2.0, size=features),
        momentum=1.0,  # keep running statistics (and so γ̂) fixed across the probes
        mode=mode,
    )
    x = rng.normal(size=(6, features))
    upstream = rng.normal(size=(6, features))

    def loss(inputs):
        out, _ = layer.forward(inputs, training=True)
        return float(np.sum(out * upstream))

    _, cache = layer.forward(x, training=True)
    dx, grads = layer.backward(upstream, cache)
    h = 1e-6
    for i in range(x.shape[0]):
        for j in range(features):
            bumped = x.copy()
            bumped[i, j] += h
            up = loss(bumped)
            bumped[i, j] -= 2 * h
            down = loss(bumped)
            assert dx[i, j] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-7)
    assert grads["beta"] == pytest.approx(upstream.sum(axis=0))


def test_softmax_cross_entropy_gradient():
    logits = np.array([[2.0, 0.0, -1.0]])
    loss, grad = softmax_cross_entropy(logits, np.array([0]))
    probs = softmax(logits)
    assert loss == pytest.approx(-np.log(probs[0, 0]))
    assert grad == pytest.approx(probs - np.array([[1.0, 0.0, 0.0]]))


def test_relu_layer_activation_in_mlp():
    net = build_mlp(2, [3], 2, make_rng(1))
    assert net.layers[0].activation is Activation.RELU
    assert net.layers[-1].activation is Activation.SOFTMAX

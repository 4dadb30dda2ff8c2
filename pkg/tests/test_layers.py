import numpy as np
import pytest

from lutq.data_models import ActQuantConfig, ActQuantScheme, Activation, BatchNormMode, QuantizerConfig
from lutq.errors import ArgumentError, DimensionError, StateError
from lutq.nn.layers import AffineLayer, BatchNormLayer, Conv2DLayer, LayerCache, bn_fold_scale
from lutq.nn.network import Network
from lutq.quantizers.dictionary import AssignmentTensor, Dictionary, QuantizedWeight, is_pow2_array


def _quantized_row():
    qw = QuantizedWeight.build(Dictionary(values=[0.5, -1.0]), AssignmentTensor([[1, 2, 1]]))
    return AffineLayer(w_full=np.zeros((1, 3)), bias=np.zeros(1), qcfg=QuantizerConfig(k=2), qweight=qw)


def test_affine_forward_uses_lookup():
    out, _ = _quantized_row().forward(np.array([[1.0, 2.0, 3.0]]), training=False)
    assert out.tolist() == [[0.0]]


def test_identity_network_is_matmul_chain():
    rng = np.random.default_rng(0)
    w1, w2 = rng.normal(size=(4, 3)), rng.normal(size=(2, 4))
    net = Network([AffineLayer(w_full=w1, bias=np.zeros(4)), AffineLayer(w_full=w2, bias=np.zeros(2))])
    x = rng.normal(size=(5, 3))
    out, caches = net.forward(x, training=False)
    assert out == pytest.approx(x @ w1.T @ w2.T, rel=1e-12)
    assert len(caches) == 2


def test_forward_shape_mismatch():
    with pytest.raises(DimensionError):
        _quantized_row().forward(np.ones((1, 4)), training=False)
    with pytest.raises(DimensionError):
        AffineLayer(w_full=np.ones((2, 3)), bias=np.zeros(3))


def test_quantized_layer_without_state():
    layer = AffineLayer(w_full=np.ones((1, 2)), bias=np.zeros(1), qcfg=QuantizerConfig(k=2))
    with pytest.raises(StateError):
        layer.forward(np.ones((1, 2)), training=False)
    layer.refresh_quantization()
    assert layer.qweight is not None


def test_q_only_changes_at_refresh():
    rng = np.random.default_rng(3)
    layer = AffineLayer(w_full=rng.normal(size=(3, 5)), bias=np.zeros(3), qcfg=QuantizerConfig(k=2))
    layer.refresh_quantization()
    x = rng.normal(size=(2, 5))
    before, _ = layer.forward(x, training=True)
    layer.w_full += rng.normal(size=(3, 5))
    after, _ = layer.forward(x, training=True)
    assert np.array_equal(before, after)
    layer.refresh_quantization()
    refreshed, _ = layer.forward(x, training=True)
    assert not np.array_equal(before, refreshed)


def test_conv_forward_matches_direct_loops():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, 3, 3, 3))
    bias = rng.normal(size=2)
    x = rng.normal(size=(1, 3, 5, 5))
    layer = Conv2DLayer(w_full=w, bias=bias, stride=2, padding=1)
    out, _ = layer.forward(x, training=False)
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((1, 2, 3, 3))
    for o in range(2):
        for i in range(3):
            for j in range(3):
                window = padded[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                expected[0, o, i, j] = np.sum(window * w[o]) + bias[o]
    assert out == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_activation_quantization_requires_relu():
    cfg = ActQuantConfig(n_bits=4, scheme=ActQuantScheme.FP, range_r=1.0)
    with pytest.raises(ArgumentError):
        AffineLayer(w_full=np.ones((1, 1)), bias=np.zeros(1), act_quant=cfg)


def test_activation_quantization_needs_range():
    layer = AffineLayer(
        w_full=np.ones((1, 1)),
        bias=np.zeros(1),
        activation=Activation.RELU,
        act_quant=ActQuantConfig(n_bits=4, scheme=ActQuantScheme.FP),
    )
    with pytest.raises(StateError):
        layer.forward(np.ones((1, 1)), training=False)


@pytest.mark.parametrize("scheme", [ActQuantScheme.FP, ActQuantScheme.POW2])
def test_quantized_activations_lie_on_grid(scheme):
    rng = np.random.default_rng(4)
    layer = AffineLayer(
        w_full=rng.normal(size=(16, 4)),
        bias=np.zeros(16),
        activation=Activation.RELU,
        act_quant=ActQuantConfig(n_bits=4, scheme=scheme, range_r=2.0),
    )
    out, _ = layer.forward(rng.normal(size=(32, 4)), training=False)
    assert out.min() >= 0.0 and out.max() <= 2.0
    if scheme is ActQuantScheme.FP:
        levels = out / (2.0 / 15)
        assert np.allclose(levels, np.round(levels), atol=1e-9)
    else:
        assert np.all(is_pow2_array(out[out > 0]))


def test_activation_gradient_is_clipped_pass_through():
    layer = AffineLayer(
        w_full=np.eye(3),
        bias=np.zeros(3),
        activation=Activation.RELU,
        act_quant=ActQuantConfig(n_bits=8, scheme=ActQuantScheme.FP, range_r=1.0),
    )
    _, cache = layer.forward(np.array([[-0.5, 0.5, 1.5]]), training=True)
    dx, _ = layer.backward(np.ones((1, 3)), cache)
    assert dx.tolist() == [[0.0, 1.0, 0.0]]


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


def _bn(gamma, beta, mean, var, eps, mode=BatchNormMode.TRADITIONAL):
    return BatchNormLayer(
        gamma=np.array([gamma]),
        beta=np.array([beta]),
        running_mean=np.array([mean]),
        running_var=np.array([var]),
        epsilon=eps,
        mode=mode,
    )


def test_bn_fold_multiplierless_boundary():
    scale, offset = bn_fold_scale(_bn(0.75, 0.0, 0.0, 0.75, 0.25, BatchNormMode.MULTIPLIER_LESS))
    assert scale.tolist() == [0.5]
    assert offset.tolist() == [0.0]


def test_bn_fold_multiplierless_offset_uses_rounded_scale():
    scale, offset = bn_fold_scale(_bn(0.75, 1.0, 2.0, 0.75, 0.25, BatchNormMode.MULTIPLIER_LESS))
    assert scale.tolist() == [0.5]
    assert offset.tolist() == [0.0]


def test_bn_fold_zero_gamma_gives_constant_channel():
    scale, offset = bn_fold_scale(_bn(0.0, 0.5, 3.0, 0.75, 0.25, BatchNormMode.MULTIPLIER_LESS))
    assert scale.tolist() == [0.0]
    assert offset.tolist() == [0.5]


def test_bn_fold_identity():
    scale, offset = bn_fold_scale(_bn(1.0, 0.0, 0.0, 0.75, 0.25))
    assert scale.tolist() == [1.0]
    assert offset.tolist() == [0.0]


def test_bn_fold_hand_example():
    scale, offset = bn_fold_scale(_bn(2.0, 1.0, 3.0, 3.75, 0.25))
    assert scale.tolist() == [1.0]
    assert offset.tolist() == [-2.0]


def test_bn_identity_at_inference():
    layer = BatchNormLayer.identity(3, epsilon=1e-12)
    x = np.random.default_rng(0).normal(size=(4, 3))
    out, _ = layer.forward(x, training=False)
    assert out == pytest.approx(x, rel=1e-9)


def test_multiplierless_scales_are_powers_of_two():
    rng = np.random.default_rng(5)
    features = 200
    layer = BatchNormLayer(
        gamma=rng.normal(size=features),
        beta=rng.normal(size=features),
        running_mean=rng.normal(size=features),
        running_var=rng.uniform(0.1, 4.0, size=features),
        mode=BatchNormMode.MULTIPLIER_LESS,
    )
    a_hat, _ = bn_fold_scale(layer)
    a = layer.gamma / np.sqrt(layer.running_var + layer.epsilon)
    assert np.all(is_pow2_array(a_hat))
    ratio = a_hat / a
    assert np.all(ratio >= 2.0 / 3.0) and np.all(ratio < 4.0 / 3.0)


def test_traditional_bn_matches_direct_normalization():
    rng = np.random.default_rng(6)
    features = 8
    layer = BatchNormLayer(
        gamma=rng.normal(size=features),
        beta=rng.normal(size=features),
        running_mean=rng.normal(size=features),
        running_var=rng.uniform(0.5, 2.0, size=features),
    )
    x = rng.normal(size=(16, features))
    out, _ = layer.forward(x, training=False)
    direct = layer.gamma * (x - layer.running_mean) / np.sqrt(layer.running_var + layer.epsilon) + layer.beta
    assert np.max(np.abs(out - direct)) <= 1e-12


def test_multiplierless_inference_matches_training_formula():
    rng = np.random.default_rng(7)
    features = 6
    layer = BatchNormLayer(
        gamma=rng.normal(size=features),
        beta=rng.normal(size=features),
        running_mean=rng.normal(size=features),
        running_var=rng.uniform(0.5, 2.0, size=features),
        mode=BatchNormMode.MULTIPLIER_LESS,
    )
    x = rng.normal(size=(10, features))
    out, _ = layer.forward(x, training=False)
    gamma_hat = layer.effective_gamma()
    direct = gamma_hat * (x - layer.running_mean) / np.sqrt(layer.running_var + layer.epsilon) + layer.beta
    assert np.max(np.abs(out - direct)) <= 1e-12


def test_bn_training_updates_running_statistics():
    layer = BatchNormLayer.identity(2)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    out, _ = layer.forward(x, training=True)
    assert out.mean(axis=0) == pytest.approx([0.0, 0.0], abs=1e-12)
    assert layer.running_mean == pytest.approx([0.2, 0.4])
    assert layer.running_var == pytest.approx([0.9 + 0.1 * 1.0, 0.9 + 0.1 * 4.0])


def test_bn_on_feature_maps():
    layer = BatchNormLayer.identity(3)
    x = np.random.default_rng(8).normal(size=(2, 3, 4, 4))
    out, _ = layer.forward(x, training=True)
    assert out.shape == x.shape
    assert out.mean(axis=(0, 2, 3)) == pytest.approx(np.zeros(3), abs=1e-12)


def test_bn_shape_checks():
    with pytest.raises(DimensionError):
        BatchNormLayer(gamma=np.ones(2), beta=np.ones(3), running_mean=np.zeros(2), running_var=np.ones(2))
    with pytest.raises(DimensionError):
        BatchNormLayer.identity(2).forward(np.ones((1, 3)), training=False)


def test_layer_cache_defaults():
    cache = LayerCache(training=True)
    assert cache.values == {}

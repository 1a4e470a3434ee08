import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pano_gin import tensor as T
from pano_gin.layers import (Critic, GatedConv2d, Generator, GeneratorConfig, InpaintModel,
                             ModelConfig, SimilarityEncoder, cube_input, face_generator)
from pano_gin.losses import cr_loss, l1_mask, wgan_d_loss, wgan_g_loss
from pano_gin.tensor import GradTape, Tensor
from pano_gin.train import TrainConfig, Trainer, forward_pipeline

rng = np.random.default_rng(7)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def conv_layer(**kw):
    return GatedConv2d(3, 5, 3, 1, rng=np.random.default_rng(0), **kw)


def test_zero_gate_halves_feature_branch():
    layer = conv_layer()
    layer.gate_weight.data[...] = 0
    x = Tensor(rng.standard_normal((2, 3, 6, 6)).astype(np.float32))
    feature = T.conv2d(x, layer.feature_weight, layer.feature_bias, 1, 1).data
    np.testing.assert_allclose(layer(x).data, 0.5 * elu(feature), atol=1e-6)


def test_scalar_gated_conv():
    layer = GatedConv2d(1, 1, 1, 1)
    for p in (layer.feature_weight, layer.gate_weight):
        p.data[...] = 1.0
    out = layer(Tensor(np.full((1, 1, 1, 1), 2.0, np.float32))).item()
    assert out == pytest.approx(2.0 / (1 + np.exp(-2.0)), abs=1e-6)
    assert out == pytest.approx(1.7616, abs=1e-4)


def test_saturated_gate_passes_feature_branch():
    layer = conv_layer()
    layer.gate_bias.data[...] = 20.0
    with T.precision(np.float64):
        for _, p in layer.named_parameters():
            p.data = p.data.astype(np.float64)
        x = Tensor(rng.standard_normal((1, 3, 5, 5)))
        want = elu(T.conv2d(x, layer.feature_weight, layer.feature_bias, 1, 1).data)
        got = layer(x).data
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-6


def test_branches_share_geometry():
    for layer in (conv_layer(), GatedConv2d(4, 6, 4, 2), GatedConv2d(4, 6, 3, transposed=True)):
        assert layer.feature_weight.shape == layer.gate_weight.shape
        assert layer.feature_bias.shape == layer.gate_bias.shape


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError, match="channels"):
        conv_layer()(Tensor(np.zeros((1, 4, 5, 5), np.float32)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 1e6))
def test_gate_strictly_inside_unit_interval(seed, scale):
    layer = conv_layer()
    layer.record_gates = True
    x = np.random.default_rng(seed).standard_normal((1, 3, 6, 6)) * scale
    layer(Tensor(x.astype(np.float32)))
    assert layer.last_gate.min() > 0.0 and layer.last_gate.max() < 1.0


def test_vanilla_layer_has_no_gate():
    layer = GatedConv2d(3, 4, 3, gated=False)
    assert "gate_weight" not in dict(layer.named_parameters())


@pytest.mark.parametrize("padding_mode", ["zeros", "circular"])
def test_transposed_layer_keeps_size(padding_mode):
    layer = GatedConv2d(2, 3, 3, transposed=True, padding_mode=padding_mode)
    out = layer(Tensor(rng.standard_normal((1, 2, 4, 16)).astype(np.float32)))
    assert out.shape == (1, 3, 4, 16)


@pytest.mark.parametrize("transposed,kernel,stride", [(False, 4, 2), (False, 3, 1), (True, 3, 1)])
def test_circular_padding_is_roll_equivariant(transposed, kernel, stride):
    layer = GatedConv2d(2, 3, kernel, stride, transposed=transposed, padding_mode="circular")
    x = rng.standard_normal((1, 2, 4, 16)).astype(np.float32)
    shift = 4
    a = layer(Tensor(np.roll(x, shift, axis=-1))).data
    b = np.roll(layer(Tensor(x)).data, shift // stride, axis=-1)
    np.testing.assert_allclose(a, b, atol=1e-5)


def face_gen(s=32, c=4, padding_mode="circular"):
    return Generator(GeneratorConfig(4, 3, c, True, padding_mode), np.random.default_rng(1))


def test_face_generator_shapes():
    gen = face_gen()
    assert len(gen.encoder) == 6 and len(gen.decoder.layers) == 6
    strip = Tensor(rng.random((1, 3, 32, 128)).astype(np.float32))
    mask = Tensor(np.zeros((1, 1, 32, 128), np.float32))
    feats, _ = gen.encode(T.concat([strip, mask], axis=1))
    assert feats[-1].shape[-2:] == (1, 2)
    out = face_generator(gen, strip, mask)
    assert out.shape == (1, 3, 32, 128)
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0
    again = face_generator(gen, strip, mask)
    assert out.data.tobytes() == again.data.tobytes()


@pytest.mark.parametrize("s", [8, 16, 24])
def test_face_generator_width_is_four_times_height(s):
    out = face_generator(face_gen(), Tensor(rng.random((1, 3, s, 4 * s)).astype(np.float32)),
                         Tensor(np.zeros((1, 1, s, 4 * s), np.float32)))
    assert out.shape == (1, 3, s, 4 * s)


def test_face_generator_rejects_bad_inputs():
    gen = face_gen()
    strip = Tensor(np.zeros((1, 3, 8, 32), np.float32))
    with pytest.raises(ValueError, match="binary"):
        face_generator(gen, strip, Tensor(np.full((1, 1, 8, 32), 0.5, np.float32)))
    with pytest.raises(ValueError, match="four times"):
        face_generator(gen, Tensor(np.zeros((1, 3, 8, 16), np.float32)),
                       Tensor(np.zeros((1, 1, 8, 16), np.float32)))


def test_cube_generator_layout_and_shape():
    faces = rng.random((2, 6, 3, 8, 8)).astype(np.float32)
    masks = (rng.random((2, 6, 1, 8, 8)) < 0.2).astype(np.float32)
    stacked = cube_input(Tensor(faces), Tensor(masks)).data
    assert stacked.shape == (2, 24, 8, 8)
    np.testing.assert_array_equal(stacked[:, 4:7], faces[:, 1])
    np.testing.assert_array_equal(stacked[:, 7], masks[:, 1, 0])
    gen = Generator(GeneratorConfig(24, 18, 4), np.random.default_rng(0))
    out = gen(Tensor(stacked))
    assert out.shape == (2, 18, 8, 8)
    assert out.data.min() >= 0 and out.data.max() <= 1


def test_similarity_encoder_keeps_size_and_zero_weights_give_zero():
    enc = SimilarityEncoder(6, np.random.default_rng(0), out_channels=5)
    x = Tensor(rng.standard_normal((1, 6, 8, 8)).astype(np.float32))
    out = enc(x)
    assert out.shape == (1, 5, 8, 8)
    assert out.data.tobytes() == enc(x).data.tobytes()
    for _, p in enc.named_parameters():
        p.data[...] = 0
    assert not enc(x).data.any()


@pytest.mark.parametrize("in_ch", [3, 18])
def test_critic_scores(in_ch):
    critic = Critic(in_ch, 4, 16, np.random.default_rng(0))
    x = Tensor(rng.random((3, in_ch, 16, 16)).astype(np.float32))
    scores = critic(x)
    assert scores.shape == (3,)
    assert np.all(np.isfinite(scores.data))
    for _, p in critic.named_parameters():
        p.data[...] = 0
    np.testing.assert_array_equal(critic(x).data, np.zeros(3))


def test_trained_critic_reacts_to_translation():
    trainer = Trainer(TrainConfig(face_size=16, channels=4, num_images=2, steps=5))
    trainer.run()
    faces = trainer.faces[:1]
    x = Tensor(faces.reshape(1, 18, 16, 16))
    shifted = Tensor(np.roll(x.data, 3, axis=-1))
    for critic, a, b in ((trainer.model.whole_d, x, shifted),
                         (trainer.model.slice_d, Tensor(faces[0]), Tensor(np.roll(faces[0], 3, -1)))):
        assert not np.allclose(critic(a).data, critic(b).data)


def small_model(**kw):
    return InpaintModel(ModelConfig(face_size=16, channels=4, **kw), np.random.default_rng(0))


def test_parameter_names_unique_and_finite():
    model = small_model()
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert all(np.all(np.isfinite(p.data)) for _, p in model.named_parameters())


def test_load_state_dict_validates():
    model = small_model()
    state = model.state_dict()
    bad = dict(state)
    bad.pop(next(iter(bad)))
    with pytest.raises(ValueError, match="missing"):
        model.load_state_dict(bad)
    name = next(iter(state))
    wrong = {**state, name: np.zeros((1, 2, 3))}
    with pytest.raises(ValueError, match="shape"):
        model.load_state_dict(wrong)


def test_side_branch_does_not_change_inference():
    model = small_model()
    x = rng.random((1, 6, 3, 16, 16)).astype(np.float32)
    mask = (rng.random((1, 6, 1, 16, 16)) < 0.2).astype(np.float32)
    with T.no_grad():
        with_side = forward_pipeline(model, x, mask, with_side=True)
        without = forward_pipeline(model, x, mask, with_side=False)
    assert with_side.y.shape == (1, 18, 16, 16)
    assert with_side.y.data.min() >= 0 and with_side.y.data.max() <= 1
    assert with_side.x_hat.data.tobytes() == without.x_hat.data.tobytes()


def test_end_to_end_gradients_reach_every_parameter():
    model = small_model()
    x = rng.random((2, 6, 3, 16, 16)).astype(np.float32)
    # one corner pixel at the 4x4 attention level, so known patches remain
    mask = np.zeros((2, 6, 1, 16, 16), np.float32)
    mask[:, :, :, 0:3, 1:4] = 1
    params = dict(model.named_parameters())
    with GradTape() as tape:
        out = forward_pipeline(model, x, mask)
        real = Tensor(x.reshape(2, 18, 16, 16))
        fake = out.composite()
        m = Tensor(out.mask)
        slices = T.reshape(fake, (12, 3, 16, 16))
        loss = T.add(l1_mask(out.x_hat, real, m), wgan_g_loss(model.slice_d(slices)))
        loss = T.add(loss, cr_loss(out.y, real, Tensor(out.incomplete), m, model.whole_d))
        loss = T.add(loss, wgan_d_loss(model.whole_d(real), model.whole_d(fake)))
    grads = dict(zip(params, tape.gradient(loss, list(params.values()))))
    for name, g in grads.items():
        assert np.all(np.isfinite(g.data)), name
        assert np.any(g.data != 0), name
    face = [n for n in grads if n.startswith("face_gen.")]
    assert face and all(np.any(grads[n].data) for n in face)


def test_astype_converts_every_parameter():
    model = small_model().astype(np.float64)
    assert all(p.dtype == np.float64 for _, p in model.named_parameters())

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, relative_error
from pathmark import codec
from pathmark.tensorio import FormatError


@settings(max_examples=50, deadline=None)
@given(bits=st.lists(st.integers(0, 1), min_size=48, max_size=48))
def test_hex_round_trip(bits):
    bits = np.array(bits, dtype=np.uint8)
    text = codec.message_to_hex(bits)
    assert len(text) == 12
    np.testing.assert_array_equal(codec.message_from_hex(text, 48), bits)


def test_hex_parsing_errors():
    assert codec.message_to_hex(codec.message_from_hex("0xA5")) == "a5"
    with pytest.raises(ValueError):
        codec.message_from_hex("zz", 8)
    with pytest.raises(ValueError):
        codec.message_from_hex("abc", 48)


def test_features_are_linear_and_offset_free(rng):
    a, b = rng.uniform(size=(64, 48)), rng.uniform(size=(64, 48))
    fa, fb = codec.extract_features(a), codec.extract_features(b)
    assert fa.shape == (256,)
    np.testing.assert_allclose(codec.extract_features(0.3 * a + 0.7 * b), 0.3 * fa + 0.7 * fb, atol=1e-12)
    np.testing.assert_allclose(codec.extract_features(a + 0.25), fa, atol=1e-12)
    np.testing.assert_allclose(codec.extract_features(2.0 * a), 2.0 * fa, atol=1e-12)


@pytest.mark.parametrize("shape", [(32, 32), (128, 128), (40, 72), (24, 24, 3)])
def test_features_vjp_is_the_adjoint(rng, shape):
    x = rng.normal(size=shape)
    g = rng.normal(size=256)
    lhs = codec.extract_features(x) @ g
    rhs = np.sum(x * codec.features_vjp(g, shape))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_msg_loss_gradient_and_stability(rng):
    z = rng.normal(scale=3, size=48)
    m = rng.integers(0, 2, size=48)
    value, grad = codec.msg_loss(z, m)
    num = central_difference(lambda v: codec.msg_loss(v, m)[0], z)
    assert relative_error(grad, num) < 1e-8
    big, _ = codec.msg_loss(np.array([800.0, -800.0]), np.array([0, 1]))
    assert np.isfinite(big) and big == pytest.approx(1600.0)


def test_logit_zero_decodes_to_zero():
    np.testing.assert_array_equal(codec.decode_bits([0.0, 1e-300, -1e-300]), [0, 1, 0])


def test_bit_accuracy():
    assert codec.bit_accuracy([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        codec.bit_accuracy([1, 0], [1])


def test_model_round_trip(tmp_path, model):
    codec.save_model(model, tmp_path / "m.wmk")
    back = codec.load_model(tmp_path / "m.wmk")
    assert back.whitened and back.k == 48 and back.meta == model.meta
    np.testing.assert_array_equal(back.projection, model.projection)
    np.testing.assert_array_equal(back.whitening_weight, model.whitening_weight)
    raw = (tmp_path / "m.wmk").read_bytes()
    assert raw.startswith(b"WMK1")
    with pytest.raises(FormatError):
        codec.decode_model(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        codec.decode_model(raw[:-8])


def test_model_meta_records_training_setup(raw_model):
    assert raw_model.meta["steps"] == 8000
    assert raw_model.meta["transforms"] == ["none", "brt:2", "crp:0.5", "jpg:50", "rot:25", "res:0.7"]


def test_trained_extractor_reads_carriers(raw_model, train_images):
    carriers = codec.carrier_patterns(48, train_images[0].shape, raw_model.seed)
    rng = np.random.default_rng(99)
    accs = []
    for img in train_images[:16]:
        m = codec.random_message(48, rng)
        accs.append(codec.bit_accuracy(codec.decode(raw_model, codec.embed_carriers(img, m, carriers)), m))
    assert np.mean(accs) > 0.95


def test_whitening_needs_enough_images(raw_model, train_images):
    with pytest.raises(ValueError, match="at least 480"):
        codec.whiten_fit(raw_model, train_images)


def test_whitened_affine_has_no_offset(model):
    _, offset = model.affine()
    assert np.max(np.abs(offset)) < 1e-10


def test_training_is_deterministic(train_images):
    a = codec.train_extractor(train_images[:8], steps=50, seed=3)
    b = codec.train_extractor(train_images[:8], steps=50, seed=3)
    assert codec.encode_model(a) == codec.encode_model(b)

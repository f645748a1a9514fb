import math

import numpy as np
import pytest

from oracles import ssim_reference
from pathmark import metrics
from pathmark.attacks import AttackSpec


def test_psnr_values():
    a = np.zeros((8, 8))
    assert metrics.psnr(a, a) == math.inf
    assert metrics.psnr(a, np.full((8, 8), 0.1)) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        metrics.psnr(a, np.zeros((8, 9)))


@pytest.mark.parametrize("shape", [(8, 8), (32, 40), (64, 64)])
def test_ssim_matches_reference(rng, shape):
    a = rng.uniform(size=shape)
    b = np.clip(a + rng.normal(0, 0.05, size=shape), 0, 1)
    assert metrics.ssim(a, b) == pytest.approx(ssim_reference(a, b), abs=1e-10)
    assert metrics.ssim(a, a) == pytest.approx(1.0)


def test_ssim_of_colour_uses_luma(rng):
    a = rng.uniform(size=(16, 16, 3))
    b = rng.uniform(size=(16, 16, 3))
    la, lb = a @ [0.299, 0.587, 0.114], b @ [0.299, 0.587, 0.114]
    assert metrics.ssim(a, b) == pytest.approx(ssim_reference(la, lb), abs=1e-10)


def test_diff_map_scaling():
    d = metrics.diff_map(np.full((8, 8), 0.53), np.full((8, 8), 0.5))
    np.testing.assert_allclose(d, 0.3)
    assert metrics.diff_map(np.ones((8, 8)), np.zeros((8, 8))).max() == 1.0


def test_mask_leakage_cases(rng):
    i_o = rng.uniform(size=(16, 16))
    mask = np.zeros((16, 16))
    mask[4:8, 4:8] = 1
    assert metrics.mask_leakage(i_o, i_o, mask) == 0.0
    assert metrics.mask_leakage(i_o + 0.01, i_o, mask) == pytest.approx(1.0, rel=1e-6)
    outside_only = i_o + 0.01 * (1 - mask)
    assert metrics.mask_leakage(outside_only, i_o, mask) == 0.0
    with pytest.raises(metrics.UndefinedMetricError):
        metrics.mask_leakage(i_o + 0.01, i_o, np.zeros((16, 16)))


def test_evaluate_columns_and_order_invariance(model, rng):
    from pathmark import synth

    spec = synth.SynthSpec()
    pairs = []
    for s in range(4):
        ph = synth.gen_phantom(spec, 50 + s)
        m = rng.integers(0, 2, 48)
        pairs.append((ph.image, np.clip(ph.image + rng.normal(0, 0.01, ph.image.shape), 0, 1), ph.mask, m))
    rep = metrics.evaluate(pairs, model)
    assert list(rep.row()) == ["PSNR", "SSIM", "None", "Brt", "Crp", "JPG", "Rot", "Res", "Avg"]
    assert rep.n_images == 4 and rep.psnr_infinite == 0
    rev = metrics.evaluate(pairs[::-1], model)
    assert rev.row() == rep.row()


def test_evaluate_excludes_infinite_psnr(model):
    img = np.full((32, 32), 0.3)
    mask = np.zeros((32, 32))
    mask[10:20, 10:20] = 1
    m = np.zeros(48, np.uint8)
    pairs = [(img, img, mask, m), (img, img + 0.01, mask, m)]
    rep = metrics.evaluate(pairs, model, [AttackSpec("none")])
    assert rep.psnr_infinite == 1 and rep.psnr == pytest.approx(40.0)
    assert rep.to_json()["psnr"] == pytest.approx(40.0)


def test_evaluate_rejects_duplicate_columns(model):
    img = np.full((16, 16), 0.3)
    with pytest.raises(ValueError):
        metrics.evaluate([(img, img, np.ones((16, 16)), np.zeros(48))], model, metrics.parse_attacks("jpg:50,jpg:70"))

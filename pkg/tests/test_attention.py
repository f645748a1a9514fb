import math

import numpy as np
import pytest

from pathmark import attention, synth
from pathmark.attention import AasParams, CasParams, DegenerateMapError, NoLocalizedTokenError
from pathmark.tensorio import AttentionBundle, AttentionSlice, Token, Word


def _blob(shape, centers, sigma=1.5):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    out = np.zeros(shape)
    for cy, cx in centers:
        out = np.maximum(out, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2)))
    return out


def _bundle_from_maps(maps, target=(64, 64)):
    tokens = [Token(f"t{i}", [AttentionSlice(0, 0, 0, m)]) for i, m in enumerate(maps)]
    return AttentionBundle(tokens, [Word("w", list(range(len(maps))))], target)


def test_token_map_is_order_independent(rng):
    slices = [AttentionSlice(l, h, t, rng.uniform(size=(8, 8))) for l in range(2) for h in range(3) for t in range(2)]
    a = _bundle_from_maps([np.ones((8, 8))])
    a.tokens[0].slices = list(slices)
    b = _bundle_from_maps([np.ones((8, 8))])
    b.tokens[0].slices = [slices[i] for i in rng.permutation(len(slices))]
    np.testing.assert_array_equal(attention.token_map(a, 0), attention.token_map(b, 0))


def test_aggregate_is_mean_over_tokens(rng):
    maps = [rng.uniform(size=(8, 8)) for _ in range(3)]
    b = _bundle_from_maps(maps, (16, 16))
    expected = sum(attention.token_map(b, i) for i in range(3)) / 3
    np.testing.assert_allclose(attention.aggregate_word(b, 0), expected, atol=1e-14)


def test_cas_prefers_compact_token():
    compact = _blob((16, 16), [(8, 8)])
    split = _blob((16, 16), [(3, 3), (12, 12), (3, 12)])
    b = _bundle_from_maps([split, compact])
    chosen, counts = attention.cas_select(b, 0)
    assert chosen == 1 and counts[1] == 1 and counts[0] >= 2


def test_cas_ties_resolve_to_lowest_position():
    m = _blob((16, 16), [(8, 8)])
    b = _bundle_from_maps([m, m.copy()])
    chosen, counts = attention.cas_select(b, 0)
    assert counts[0] == counts[1] and chosen == 0


def test_token_without_clusters_counts_as_infinite(rng):
    # sparse isolated spikes: supra-quantile pixels never reach min_pts neighbours
    sparse = np.zeros((64, 64))
    sparse[::8, ::8] = 1.0 + rng.uniform(size=(8, 8))
    b = _bundle_from_maps([sparse, _blob((64, 64), [(30, 30)], 4.0)])
    chosen, counts = attention.cas_select(b, 0)
    assert math.isinf(counts[0]) and chosen == 1
    with pytest.raises(NoLocalizedTokenError):
        attention.cas_select(_bundle_from_maps([sparse]), 0)


def test_aas_threshold_fraction_and_range(rng):
    a = rng.uniform(size=(40, 50))
    tau, fld = attention.aas(a)
    assert 0 < tau < 1
    assert np.all((fld > 0) & (fld < 1))
    assert abs(np.mean(fld > 0.5) - 0.30) <= 1 / a.size


def test_aas_is_monotone_and_scale_invariant(rng):
    a = rng.uniform(size=(30, 30)) ** 3
    _, fld = attention.aas(a)
    order = np.argsort(a, axis=None)
    assert np.all(np.diff(fld.reshape(-1)[order]) >= 0)
    _, fld2 = attention.aas(7.5 * a)
    np.testing.assert_allclose(fld, fld2, atol=1e-12)


def test_aas_rejects_constant_maps():
    with pytest.raises(DegenerateMapError):
        attention.aas(np.full((8, 8), 0.2))


def test_parameter_validation():
    with pytest.raises(ValueError):
        CasParams(support_quantile=1.0)
    with pytest.raises(ValueError):
        AasParams(gain=0)


def test_localize_modes_on_synthetic_instance(synth_spec):
    ph, bundle = synth.gen_instance(synth_spec, 5)
    clean = synth.clean_token_index(bundle)
    full = attention.localize(bundle, 0, mode="full")
    assert full.selected_token == clean
    assert full.field.shape == ph.mask.shape
    inside, outside = full.field[ph.mask > 0].mean(), full.field[ph.mask == 0].mean()
    assert inside > outside
    hard = attention.localize(bundle, 0, mode="no_aas")
    assert set(np.unique(hard.field)) == {attention.HARD_EPS, 1 - attention.HARD_EPS}
    nocas = attention.localize(bundle, 0, mode="no_cas")
    assert nocas.selected_token == -1 and nocas.cluster_counts == []
    side = full.sidecar()
    assert side["selected_token"] == clean and side["mode"] == "full"
    with pytest.raises(ValueError):
        attention.localize(bundle, 0, mode="bogus")


def test_localization_invariant_to_attention_scale(synth_spec):
    _, bundle = synth.gen_instance(synth_spec, 11)
    a = attention.localize(bundle, 0)
    b = attention.localize(bundle.scaled(3.0), 0)
    assert a.selected_token == b.selected_token
    np.testing.assert_allclose(a.field, b.field, atol=1e-9)


def test_combine_words_is_pixelwise_max(rng):
    x, y = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
    np.testing.assert_array_equal(attention.combine_words([x, y]), np.maximum(x, y))
    with pytest.raises(ValueError):
        attention.combine_words([x, np.ones((4, 4))])

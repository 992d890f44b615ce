import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from chanquant.quantizer import (
    Granularity,
    QuantizedActivation,
    QuantParamError,
    QuantParams,
    QuantShapeError,
    compute_params,
    dequantize_prescale,
    fake_quantize_ste_backward,
    fake_quantize_ste_forward,
    params_channelwise,
    params_channelwise_loop,
    params_layerwise,
    prescale_decomposed,
    quantize,
)
from chanquant.tensor import ActivationTensor, decompose
from oracles import decompose_by_index, per_channel_params, quantize_scalar

values = st.floats(-1e3, 1e3, allow_nan=False, width=32)
shapes = st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4))
bit_widths = st.integers(2, 8)


@st.composite
def tensors(draw, shape=shapes):
    s = draw(shape)
    return ActivationTensor(draw(hnp.arrays(np.float32, s, elements=values)))


def T(rows):
    """(1, C, 1, W) tensor from per-channel rows."""
    return ActivationTensor(np.array(rows, dtype=np.float32)[None, :, None, :])


def nondegenerate(t):
    v = decompose(t).matrix
    return (v.max(axis=1).astype(np.float64) - v.min(axis=1)) > 1e-12


# -- params -------------------------------------------------------------------

def test_layerwise_exact_code_range():
    p = params_layerwise(T([[0, 1, 2, 3, 4, 5, 6, 7]]), 3)
    assert p.scale.tolist() == [1.0]
    assert p.zero_point.tolist() == [0]
    assert p.granularity is Granularity.LAYER


def test_layerwise_half_to_even_zero_point():
    p = params_layerwise(T([[-1.0, 1.0]]), 3)
    assert p.scale[0] == 2 / 7
    # -min/scale = 3.5 rounds to the even neighbour
    assert p.zero_point[0] == 4


def test_layerwise_degenerate_zero():
    p = params_layerwise(T([[0.0, 0.0, 0.0]]), 3)
    assert (p.scale[0], p.zero_point[0]) == (1.0, 0)


@pytest.mark.parametrize("bits", [0, 1, 9, 16, 2.5, True])
def test_invalid_bit_widths(bits):
    t = T([[0.0, 1.0]])
    with pytest.raises(QuantParamError):
        params_layerwise(t, bits)
    with pytest.raises(QuantParamError):
        params_channelwise(decompose(t), bits)


def test_channelwise_exact_divisors():
    p = params_channelwise(decompose(T([[0, 7, 3], [0, 14, 1]])), 3)
    assert p.scale.tolist() == [1.0, 2.0]
    assert p.zero_point.tolist() == [0, 0]


def test_channelwise_mixed_degenerate():
    p = params_channelwise(decompose(T([[3.0, 3.0], [-1.0, 1.0]])), 3)
    assert p.scale.tolist() == [1.0, 2 / 7]
    assert p.zero_point.tolist() == [-3, 4]


def test_zero_point_not_clamped_for_positive_range():
    p = params_layerwise(T([[10.0, 17.0]]), 3)
    assert p.zero_point[0] == -10
    q = quantize(T([[10.0, 17.0]]), p)
    assert q.codes.ravel().tolist() == [0, 7]


@settings(max_examples=80, deadline=None)
@given(tensors(), bit_widths)
def test_channelwise_equals_scalar_oracle(t, bits):
    p = params_channelwise(decompose(t), bits)
    scales, zps = per_channel_params(decompose_by_index(t.data.tolist(), t.shape), bits)
    assert p.scale.tolist() == scales
    assert p.zero_point.tolist() == zps
    assert params_channelwise_loop(t, bits) == p


@settings(max_examples=60, deadline=None)
@given(tensors(), bit_widths)
def test_channelwise_equals_layerwise_per_slice(t, bits):
    p = params_channelwise(decompose(t), bits)
    for c in range(t.channels):
        lp = params_layerwise(ActivationTensor(t.values[:, c : c + 1]), bits)
        assert (p.scale[c], p.zero_point[c]) == (lp.scale[0], lp.zero_point[0])


@settings(max_examples=80, deadline=None)
@given(tensors(), bit_widths)
def test_scale_dominance(t, bits):
    ch = params_channelwise(decompose(t), bits)
    lw = params_layerwise(t, bits)
    live = nondegenerate(t)
    assert np.all(ch.scale[live] <= lw.scale[0])


# -- quantize / dequantize -------------------------------------------------------

def _params(scale, zp, bits):
    return QuantParams([scale], [zp], bits, Granularity.LAYER)


def test_quantize_unit_scale():
    q = quantize(T([[3.4]]), _params(1.0, 0, 3))
    assert q.codes.ravel().tolist() == [3]


def test_quantize_half_to_even_at_lower_edge():
    q = quantize(T([[-1.0]]), _params(2 / 7, 4, 3))
    assert q.codes.ravel().tolist() == [0]


def test_quantize_clamps_above_range():
    p = params_layerwise(T([[-1.0, 1.0]]), 3)
    q = quantize(T([[1.0, 5.0, 1e6, -1e6]]), p)
    assert q.codes.ravel().tolist() == [7, 7, 7, 0]


def test_quantize_matches_scalar_oracle(rng):
    t = ActivationTensor((rng.standard_normal((2, 4, 3, 5)) * np.array([1, 5, 0.1, 20])[None, :, None, None]).astype(np.float32))
    for bits in (2, 3, 5, 8):
        p = params_channelwise(decompose(t), bits)
        codes = quantize(t, p).codes
        for (n, c, h, w), x in np.ndenumerate(t.values):
            assert codes[n, c, h, w] == quantize_scalar(x, p.scale[c], int(p.zero_point[c]), bits)


def test_codes_are_uint8_and_in_range(rng):
    t = ActivationTensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32))
    for bits in range(2, 9):
        q = quantize(t, compute_params(t, bits, Granularity.CHANNEL))
        assert q.codes.dtype == np.uint8
        assert q.codes.max() <= 2**bits - 1


def test_channel_count_mismatch():
    p = QuantParams([1.0, 1.0, 1.0], [0, 0, 0], 3, Granularity.CHANNEL)
    with pytest.raises(QuantShapeError):
        quantize(T([[0.0], [1.0]]), p)


@pytest.mark.parametrize("code, scale, zp, expected", [(4, 2 / 7, 4, 0.0), (0, 1.0, 0, 0.0), (7, 1.0, 0, 7.0), (0, 0.5, 3, -1.5)])
def test_dequantize_examples(code, scale, zp, expected):
    q = QuantizedActivation(np.full((1, 1, 1, 1), code, dtype=np.uint8), _params(scale, zp, 3))
    assert dequantize_prescale(q).values.item() == expected


def test_prescaled_matrix_is_the_decomposed_dequantization(rng):
    t = ActivationTensor((rng.standard_normal((3, 5, 4, 4)) * 7).astype(np.float32))
    q = quantize(t, params_channelwise(decompose(t), 4))
    np.testing.assert_array_equal(prescale_decomposed(q), decompose(dequantize_prescale(q)).matrix)


@settings(max_examples=100, deadline=None)
@given(tensors(), bit_widths, st.sampled_from(list(Granularity)))
def test_reconstruction_bound(t, bits, gran):
    p = compute_params(t, bits, gran)
    rec = dequantize_prescale(quantize(t, p))
    s = p.scale if gran is Granularity.CHANNEL else np.full(t.channels, p.scale[0])
    err = np.abs(t.values.astype(np.float64) - rec.values)
    assert np.all(err <= s.reshape(1, -1, 1, 1))


@settings(max_examples=100, deadline=None)
@given(tensors(), bit_widths, st.sampled_from(list(Granularity)))
def test_requantization_is_idempotent(t, bits, gran):
    p = compute_params(t, bits, gran)
    q = quantize(t, p)
    np.testing.assert_array_equal(quantize(dequantize_prescale(q), p).codes, q.codes)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-100, 100, width=32), st.floats(-100, 100, width=32),
    st.floats(1e-3, 10), st.integers(-300, 300), bit_widths,
)
def test_monotone_codes(x, y, scale, zp, bits):
    lo, hi = min(x, y), max(x, y)
    q = quantize(T([[lo, hi]]), _params(scale, zp, bits)).codes.ravel()
    assert q[0] <= q[1]


def test_params_invariants_enforced():
    with pytest.raises(QuantParamError):
        QuantParams([0.0], [0], 3, Granularity.LAYER)
    with pytest.raises(QuantParamError):
        QuantParams([1.0, 2.0], [0], 3, Granularity.CHANNEL)
    with pytest.raises(QuantParamError):
        QuantParams([1.0, 2.0], [0, 0], 3, Granularity.LAYER)
    with pytest.raises(QuantParamError):
        QuantizedActivation(np.full((1, 1, 1, 1), 8, dtype=np.uint8), _params(1.0, 0, 3))


# -- fake quant / STE -------------------------------------------------------------

def test_fake_quant_fixed_point_on_lattice():
    t = T([[0, 1, 2, 3, 4, 5, 6, 7, 3, 5]])
    assert fake_quantize_ste_forward(t, 3, Granularity.LAYER) == t


def test_fake_quant_zero_tensor():
    t = ActivationTensor(np.zeros((2, 3, 2, 2), dtype=np.float32))
    for gran in Granularity:
        assert not fake_quantize_ste_forward(t, 3, gran).values.any()


@settings(max_examples=50, deadline=None)
@given(tensors(), bit_widths, st.sampled_from(list(Granularity)))
def test_fake_quant_is_the_composition(t, bits, gran):
    out = fake_quantize_ste_forward(t, bits, gran)
    ref = dequantize_prescale(quantize(t, compute_params(t, bits, gran)))
    assert out.values.tobytes() == ref.values.tobytes()


@settings(max_examples=30, deadline=None)
@given(tensors())
def test_ste_backward_identity(g):
    assert fake_quantize_ste_backward(g, g.shape).values.tobytes() == g.values.tobytes()


def test_ste_backward_zero_and_mismatch():
    z = ActivationTensor(np.zeros((1, 2, 2, 2), dtype=np.float32))
    assert fake_quantize_ste_backward(z) == z
    with pytest.raises(QuantShapeError):
        fake_quantize_ste_backward(z, (1, 2, 2, 3))

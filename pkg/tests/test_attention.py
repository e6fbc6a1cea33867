import math

import numpy as np
import pytest

from binattn.attention import (
    AttentionConfig,
    BiasSpec,
    binary_attention_fused,
    binary_attention_unfused,
    binary_scores,
    materialize_bias,
    pv_error_bound,
    pv_error_envelope,
    reference_attention,
)
from binattn.bitops import pack_signs
from binattn.errors import ConfigError, ShapeError

OFF = AttentionConfig(quantize_pv=False)


def gaussian(rng, n, d):
    return tuple(rng.standard_normal((n, d)) for _ in range(3))


def blocks(b):
    return AttentionConfig(block_rows=b, block_cols=b, quantize_pv=False)


# -- bias ----------------------------------------------------------------


def test_bias_none_is_zero():
    assert not materialize_bias(BiasSpec.none(), 4).data.any()


def test_bias_relative1d_constant():
    b = materialize_bias(BiasSpec.relative1d(np.full(9, 0.7)), 5).data
    assert np.all(b == 0.7)


def test_bias_relative1d_offsets():
    offs = np.arange(7.0)
    b = materialize_bias(BiasSpec.relative1d(offs), 4).data
    for i in range(4):
        for j in range(4):
            assert b[i, j] == offs[i - j + 3]


def test_bias_relative2d_enumeration():
    rows, cols = np.array([1.0, 10.0, 100.0]), np.array([0.25, 0.5, 0.75])
    b = materialize_bias(BiasSpec.relative2d(rows, cols), 4).data
    grid = {0: (0, 0), 1: (0, 1), 2: (1, 0), 3: (1, 1)}
    for i in range(4):
        for j in range(4):
            (ri, ci), (rj, cj) = grid[i], grid[j]
            assert b[i, j] == rows[ri - rj + 1] + cols[ci - cj + 1]


def test_bias_shape_errors():
    with pytest.raises(ShapeError):
        materialize_bias(BiasSpec.relative2d(np.zeros(3), np.zeros(3)), 5)
    with pytest.raises(ShapeError):
        materialize_bias(BiasSpec.relative2d(np.zeros(3), np.zeros(3)), 9)
    with pytest.raises(ShapeError):
        materialize_bias(BiasSpec.dense(np.zeros((3, 3))), 4)
    with pytest.raises(ShapeError):
        materialize_bias(BiasSpec.relative1d(np.zeros(3)), 4)


def test_decomposable_bias_storage_is_sublinear():
    n = 196
    dense = BiasSpec.dense(np.zeros((n, n)))
    rel = BiasSpec.relative2d(np.zeros(27), np.zeros(27))
    assert dense.parameter_count == n * n
    assert rel.parameter_count == 54
    assert materialize_bias(rel, n).shape == (n, n)


# -- reference -----------------------------------------------------------


def test_reference_single_token(rng):
    q, k, v = gaussian(rng, 1, 3)
    out = reference_attention(q, k, v)
    assert out.p.tolist() == [[1.0]]
    assert np.array_equal(out.y, v)


def test_reference_identical_keys_uniform(rng):
    q, _, v = gaussian(rng, 6, 4)
    k = np.tile(rng.standard_normal(4), (6, 1))
    out = reference_attention(q, k, v)
    np.testing.assert_allclose(out.p, 1 / 6, rtol=1e-14)
    np.testing.assert_allclose(out.y, np.tile(v.mean(axis=0), (6, 1)), rtol=1e-13)


def test_reference_hand_expansion():
    # Values frozen from a scalar math.exp expansion with tau = sqrt(2).
    q = [[1, 0], [0, 1], [1, 1]]
    k = [[1, 2], [0, -1], [2, 0]]
    v = [[1, 0], [0, 1], [2, 3]]
    expected = [
        [1.435946100171984, 1.867955280689464],
        [1.0904214159520982, 0.6230592029583203],
        [1.279583875511066, 0.9910689050982149],
    ]
    np.testing.assert_allclose(reference_attention(q, k, v).y, expected, rtol=1e-14)


def test_reference_shape_errors(rng):
    q, k, v = gaussian(rng, 4, 3)
    with pytest.raises(ShapeError):
        reference_attention(q, k[:, :2], v)
    with pytest.raises(ShapeError):
        reference_attention(q, k, v[:3])
    with pytest.raises(ShapeError):
        reference_attention(q, k, v, AttentionConfig(n=5))


# -- unfused binary ------------------------------------------------------


def test_self_similarity_is_row_max(rng):
    s = np.where(rng.standard_normal((8, 16)) >= 0, 1.5, -1.5)
    scores = binary_scores(s, s, OFF)
    mu = 1.5
    np.testing.assert_allclose(np.diag(scores), mu * mu * 16 / 4)
    assert np.all(np.diag(scores) == scores.max(axis=1))


def test_unfused_d1_hand_case():
    # mu_q = 1.25, mu_k = 2, signs (+,-) for both, tau = 1 -> S = 2.5 * [[1,-1],[-1,1]]
    q, k, v = [[0.5], [-2.0]], [[3.0], [-1.0]], [[1.0], [5.0]]
    out = binary_attention_unfused(q, k, v, AttentionConfig(temperature=1.0, quantize_pv=False))
    np.testing.assert_allclose(out.y.ravel(), [1.0267714036971394, 4.973228596302861], rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("n,d", [(8, 4), (64, 8), (128, 64)])
def test_unfused_quantization_error_bound(seed, n, d):
    # Triangle inequality over both roundings: coefficient error <= 1/510 per
    # entry, value error <= delta/2 per entry, |value| <= 127 * delta.
    q, k, v = gaussian(np.random.default_rng(seed), n, d)
    exact = binary_attention_unfused(q, k, v, OFF).y
    quant = binary_attention_unfused(q, k, v).y
    assert np.all(np.abs(quant - exact) <= pv_error_bound(v))
    fused = binary_attention_fused(q, k, v, AttentionConfig(block_rows=16, block_cols=16)).y
    assert np.all(np.abs(fused - exact) <= pv_error_bound(v))


def test_diagnostic_rows_sum_to_one(rng):
    q, k, v = gaussian(rng, 30, 8)
    for fn in (reference_attention, binary_attention_unfused):
        np.testing.assert_allclose(fn(q, k, v).p.sum(axis=1), 1.0, atol=1e-6)


# -- fused ---------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 7, 64])
def test_single_block_bit_identical(n, rng, backend):
    q, k, v = gaussian(rng, n, 16)
    u = binary_attention_unfused(q, k, v, OFF)
    f = binary_attention_fused(q, k, v, blocks(n))
    assert np.array_equal(f.y, u.y)
    assert np.array_equal(f.row_max, u.row_max)
    assert np.array_equal(f.row_sum, u.row_sum)


@pytest.mark.parametrize("n", [7, 64, 128, 256])
@pytest.mark.parametrize("b", [1, 3, 16, 64, None])
def test_online_softmax_exact(n, b, backend):
    rng = np.random.default_rng(n)
    q, k, v = gaussian(rng, n, 16)
    u = binary_attention_unfused(q, k, v, OFF).y
    f = binary_attention_fused(q, k, v, blocks(b or n)).y
    assert np.abs(f - u).max() <= 1e-12 * np.abs(u).max()


def test_mixed_block_shapes(rng):
    q, k, v = gaussian(rng, 50, 8)
    u = binary_attention_unfused(q, k, v, OFF).y
    f = binary_attention_fused(q, k, v, AttentionConfig(block_rows=7, block_cols=13, quantize_pv=False)).y
    assert np.abs(f - u).max() <= 1e-12 * np.abs(u).max()


@pytest.mark.parametrize("variant", ["dense", "rel1d", "rel2d"])
def test_fused_with_bias_matches_unfused(variant, rng):
    from binattn.cli import make_bias

    n = 49
    q, k, v = gaussian(rng, n, 8)
    bias = make_bias(variant, n, rng)
    dense = BiasSpec.dense(materialize_bias(bias, n).data)
    u = binary_attention_unfused(q, k, v, AttentionConfig(bias=dense, quantize_pv=False)).y
    f = binary_attention_fused(q, k, v, AttentionConfig(block_rows=8, block_cols=5, bias=bias, quantize_pv=False)).y
    assert np.abs(f - u).max() <= 1e-12 * np.abs(u).max()


def test_fused_quantized_close_to_unquantized():
    q, k, v = gaussian(np.random.default_rng(3), 128, 64)
    u = binary_attention_unfused(q, k, v, OFF).y
    f = binary_attention_fused(q, k, v, AttentionConfig()).y
    assert np.linalg.norm(f - u) <= 1e-2 * np.linalg.norm(u)
    assert np.abs(f - u).max() <= pv_error_envelope(v)


def test_envelope_is_not_worst_case():
    # Many tokens, few channels: the stacked envelope is exceeded, the
    # worst-case bound is not.
    q, k, v = gaussian(np.random.default_rng(0), 256, 4)
    u = binary_attention_unfused(q, k, v, OFF).y
    quant = binary_attention_unfused(q, k, v).y
    err = np.abs(quant - u).max()
    assert err > pv_error_envelope(v)
    assert np.all(np.abs(quant - u) <= pv_error_bound(v))


def test_fused_thread_count_irrelevant(rng):
    q, k, v = gaussian(rng, 200, 16)
    cfg = AttentionConfig(block_rows=16, block_cols=32)
    one = binary_attention_fused(q, k, v, cfg, threads=1).y
    many = binary_attention_fused(q, k, v, cfg, threads=4).y
    assert np.array_equal(one, many)
    assert np.array_equal(one, binary_attention_fused(q, k, v, cfg, threads=1).y)


def test_block_larger_than_n_is_clipped(rng):
    q, k, v = gaussian(rng, 5, 4)
    assert np.array_equal(
        binary_attention_fused(q, k, v, blocks(64)).y, binary_attention_fused(q, k, v, blocks(5)).y
    )


def test_config_errors(rng):
    q, k, v = gaussian(rng, 5, 4)
    with pytest.raises(ConfigError):
        binary_attention_fused(q, k, v, AttentionConfig(block_rows=0))
    with pytest.raises(ConfigError):
        reference_attention(q, k, v, AttentionConfig(temperature=-1.0))


def test_default_temperature_is_sqrt_d():
    assert AttentionConfig().resolve(10, 49).temperature == 7.0
    assert AttentionConfig(temperature=2.0).resolve(10, 49).temperature == 2.0


# -- invariances ----------------------------------------------------------


def test_constant_bias_leaves_output_unchanged(rng):
    q, k, v = gaussian(rng, 12, 6)
    base = binary_attention_unfused(q, k, v, OFF)
    shifted = binary_attention_unfused(
        q, k, v, AttentionConfig(quantize_pv=False, bias=BiasSpec.relative1d(np.full(23, -3.25)))
    )
    assert np.abs(base.p - shifted.p).max() <= 1e-12
    assert np.abs(base.y - shifted.y).max() <= 1e-12 * np.abs(base.y).max()


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 2.0, 1e4])
def test_positive_scale_only_rescales_scores(alpha, rng):
    q, k, _ = gaussian(rng, 10, 20)
    assert pack_signs(alpha * q) == pack_signs(q)
    s1, s2 = binary_scores(q, k), binary_scores(alpha * q, k)
    np.testing.assert_allclose(s2, alpha * s1, rtol=1e-12)


def test_all_paths_deterministic(rng):
    q, k, v = gaussian(rng, 40, 8)
    for fn in (reference_attention, binary_attention_unfused, binary_attention_fused):
        for cfg in (OFF, AttentionConfig(block_rows=8, block_cols=8)):
            assert np.array_equal(fn(q, k, v, cfg).y, fn(q.copy(), k.copy(), v.copy(), cfg).y)


def test_identical_scores_give_uniform_rows():
    q = np.ones((4, 3))
    out = binary_attention_unfused(q, q, np.eye(4, 3), OFF)
    np.testing.assert_allclose(out.p, 0.25, rtol=1e-15)
    assert math.isclose(out.row_sum[0], 4.0)

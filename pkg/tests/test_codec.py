import math

import numpy as np
import pytest

from qtpart.codec import (MODE_OVERHEAD_BITS, NS, QT, TRANSFORM_SIZES,
                          CodecConfig, RdCost, SearchState, dct2d, encode_ns,
                          exhaustive_search, lambda_of_qp, psnr, psnr_of_mse,
                          qstep_of_qp, qt_cost_table, split_signal_cost)
from qtpart.frame_io import LumaFrame, Rect, causal_patch

from helpers import bottom_up_qt_cost, dyadic_tables, natural_frame


# -- rate control laws --------------------------------------------------


def test_lambda_spot_values():
    # 0.57 * 2^((qp-12)/3), recomputed from the law
    assert lambda_of_qp(27) == 18.24
    assert lambda_of_qp(12) == 0.57
    for qp in range(0, 52):
        assert lambda_of_qp(qp) == 0.57 * 2.0 ** ((qp - 12) / 3.0)


def test_qstep_spot_values():
    assert qstep_of_qp(22) == 8.0
    assert qstep_of_qp(4) == 1.0
    for qp in range(0, 52):
        assert qstep_of_qp(qp) == 2.0 ** ((qp - 4) / 6.0)


@pytest.mark.parametrize("qp", [-1, 52])
def test_qp_range_checked(qp):
    with pytest.raises(ValueError, match="outside"):
        lambda_of_qp(qp)
    with pytest.raises(ValueError, match="outside"):
        qstep_of_qp(qp)


# -- transform -----------------------------------------------------------


@pytest.mark.parametrize("n", TRANSFORM_SIZES)
def test_dct_constant_block_dc(n):
    c = dct2d(np.full((n, n), 3.0))
    assert c[0, 0] == pytest.approx(3.0 * n, rel=1e-12)
    assert np.abs(c.ravel()[1:]).max() < 1e-9


@pytest.mark.parametrize("n", TRANSFORM_SIZES)
def test_dct_roundtrip_and_parseval(n):
    rng = np.random.default_rng(n)
    x = rng.normal(0, 50, (n, n))
    c = dct2d(x)
    assert np.allclose(dct2d(c, inverse=True), x, atol=1e-9)
    # orthonormal transform preserves energy
    assert np.sum(c * c) == pytest.approx(np.sum(x * x), rel=1e-12)


def test_dct_rejects_bad_shapes():
    with pytest.raises(ValueError, match="square"):
        dct2d(np.zeros((8, 16)))
    with pytest.raises(ValueError, match="square"):
        dct2d(np.zeros((12, 12)))


# -- cost type and config ------------------------------------------------


def test_rdcost_compute():
    c = RdCost.compute(rate=10.0, dist=3.0, lam=2.5)
    assert c.j == 3.0 + 2.5 * 10.0
    assert c.lam == 2.5
    with pytest.raises(ValueError, match="non-negative"):
        RdCost.compute(rate=-1.0, dist=0.0, lam=1.0)


def test_codec_config_validation():
    cfg = CodecConfig()
    assert (cfg.ctu, cfg.max_depth, cfg.qp, cfg.split_bits) == (64, 3, 32, 2.0)
    with pytest.raises(ValueError, match="ctu must be one of"):
        CodecConfig(ctu=48)
    with pytest.raises(ValueError, match="max_depth"):
        CodecConfig(max_depth=0)
    with pytest.raises(ValueError, match="below 4x4"):
        CodecConfig(ctu=32, max_depth=4)
    with pytest.raises(ValueError, match="outside"):
        CodecConfig(qp=99)
    with pytest.raises(ValueError, match="split_bits"):
        CodecConfig(split_bits=-0.5)


def test_at_qp_keeps_other_fields():
    cfg = CodecConfig(ctu=32, max_depth=2, qp=22, split_bits=3.0)
    other = cfg.at_qp(37)
    assert other.qp == 37
    assert (other.ctu, other.max_depth, other.split_bits) == (32, 2, 3.0)


def test_split_signal_cost():
    cfg = CodecConfig(qp=27, split_bits=2.0)
    assert split_signal_cost(cfg) == 18.24 * 2.0


# -- single-block encode --------------------------------------------------


def _lone_patch(pixels, qp, ctu):
    frame = LumaFrame(pixels)
    state = SearchState(frame)
    cfg = CodecConfig(ctu=ctu, max_depth=2, qp=qp)
    return causal_patch(state.work, Rect(0, 0, ctu, ctu), state.mask), cfg


def test_flat_block_at_fill_value_costs_only_rate():
    # value 128 equals the no-reference DC prediction: zero residual,
    # so J is purely the signalling rate (4 mode bits + 1 bit/coeff)
    patch, cfg = _lone_patch(np.full((32, 32), 128, np.uint8), qp=32, ctu=32)
    cost, recon = encode_ns(patch, cfg)
    assert cost.dist == 0.0
    assert cost.rate == MODE_OVERHEAD_BITS + 32 * 32
    assert cost.j == lambda_of_qp(32) * (MODE_OVERHEAD_BITS + 32 * 32)
    assert np.array_equal(recon, np.full((32, 32), 128))


def test_encode_ns_cost_identity_and_recon_range():
    f = natural_frame(8, h=32, w=32)
    patch, cfg = _lone_patch(f.pixels, qp=27, ctu=32)
    cost, recon = encode_ns(patch, cfg)
    assert cost.j == cost.dist + cost.lam * cost.rate
    assert cost.lam == lambda_of_qp(27)
    assert recon.dtype == np.uint8
    # distortion is the SSE against the source block
    sse = float(np.sum((recon.astype(np.int64) - patch.cu.astype(np.int64)) ** 2))
    assert cost.dist == sse


def test_dc_prediction_uses_reconstructed_neighbors():
    # frame of constant 57; once the top and left blocks are committed,
    # the middle block predicts 57 exactly and pays no distortion
    pix = np.full((32, 32), 57, np.uint8)
    frame = LumaFrame(pix)
    state = SearchState(frame)
    cfg = CodecConfig(ctu=32, max_depth=2, qp=32)
    for rect in (Rect(0, 0, 16, 16), Rect(16, 0, 16, 16), Rect(0, 16, 16, 16)):
        patch = causal_patch(state.work, rect, state.mask)
        cost, recon = encode_ns(patch, cfg)
        state.commit(rect, 1, recon, cost)
    patch = causal_patch(state.work, Rect(16, 16, 16, 16), state.mask)
    assert patch.top_available and patch.left_available
    cost, recon = encode_ns(patch, cfg)
    assert cost.dist == 0.0
    assert np.array_equal(recon, np.full((16, 16), 57))


def test_rate_decreases_with_coarser_quantization():
    f = natural_frame(9, h=32, w=32)
    rates = []
    for qp in (22, 37):
        patch, cfg = _lone_patch(f.pixels, qp=qp, ctu=32)
        cost, _ = encode_ns(patch, cfg)
        rates.append(cost.rate)
    assert rates[0] > rates[1]


# -- search state ---------------------------------------------------------


def test_state_commit_and_neighbor_lookup():
    f = natural_frame(10, h=64, w=64)
    state = SearchState(f)
    assert state.neighbor_at(10, 10) is None          # nothing encoded yet
    assert state.neighbor_at(-1, 0) is None           # off frame
    cost = RdCost.compute(rate=100.0, dist=50.0, lam=2.0)
    recon = np.full((32, 32), 7, np.uint8)
    state.commit(Rect(0, 0, 32, 32), 1, recon, cost)
    assert state.mask[:32, :32].all() and not state.mask[32:, :].any()
    assert np.array_equal(state.work[:32, :32], recon)
    jpp, depth = state.neighbor_at(31, 31)
    assert depth == 1
    assert jpp == cost.j / 1024.0


# -- full search ----------------------------------------------------------


def test_search_rejects_partial_roots():
    f = natural_frame(11, h=64, w=64)
    with pytest.raises(ValueError, match="full 64x64 CTU"):
        exhaustive_search(Rect(0, 0, 32, 32), CodecConfig(), SearchState(f))


def test_exhaustive_pixel_count_is_depth_plus_one_levels():
    # every depth level re-codes the full 64x64 area once
    f = natural_frame(12, h=64, w=64)
    for md, want in ((1, 2 * 4096), (3, 4 * 4096)):
        state = SearchState(f)
        exhaustive_search(Rect(0, 0, 64, 64), CodecConfig(max_depth=md), state)
        assert state.pixels == want


def test_flat_frame_prefers_no_split():
    f = LumaFrame(np.full((64, 64), 200, np.uint8))
    state = SearchState(f)
    tree = exhaustive_search(Rect(0, 0, 64, 64), CodecConfig(), state)
    assert tree.chosen == NS
    assert [n.rect for n in tree.chosen_leaves()] == [Rect(0, 0, 64, 64)]


def test_blocky_frame_prefers_split():
    quads = np.kron(np.array([[30, 220], [220, 30]]), np.ones((32, 32)))
    f = LumaFrame(quads.astype(np.uint8))
    state = SearchState(f)
    tree = exhaustive_search(Rect(0, 0, 64, 64), CodecConfig(qp=22), state)
    assert tree.chosen == QT


def test_chosen_leaves_tile_the_root():
    f = natural_frame(13, h=64, w=64)
    tree = exhaustive_search(Rect(0, 0, 64, 64), CodecConfig(), SearchState(f))
    covered = np.zeros((64, 64), int)
    for leaf in tree.chosen_leaves():
        r = leaf.rect
        covered[r.y:r.y + r.h, r.x:r.x + r.w] += 1
    assert (covered == 1).all()


def test_deeper_search_never_costs_more():
    f = natural_frame(14, h=64, w=64)
    js = []
    for md in (1, 2, 3):
        tree = exhaustive_search(Rect(0, 0, 64, 64),
                                 CodecConfig(max_depth=md), SearchState(f))
        js.append(tree.best_j)
    assert js[2] <= js[1] <= js[0]


def test_search_is_deterministic():
    f = natural_frame(15, h=64, w=64)
    a = exhaustive_search(Rect(0, 0, 64, 64), CodecConfig(), SearchState(f))
    b = exhaustive_search(Rect(0, 0, 64, 64), CodecConfig(), SearchState(f))
    assert a.to_dict() == b.to_dict()
    assert a.best_j == b.best_j


def test_tree_dict_and_rate_bits_consistent():
    f = natural_frame(16, h=64, w=64)
    cfg = CodecConfig()
    tree = exhaustive_search(Rect(0, 0, 64, 64), cfg, SearchState(f))

    def manual_rate(d):
        if d["chosen"] == NS:
            return d["ns"]["rate"]
        return cfg.split_bits + sum(manual_rate(c) for c in d["children"])

    assert tree.rate_bits(cfg.split_bits) == pytest.approx(
        manual_rate(tree.to_dict()), rel=1e-12)


# -- split-cost aggregation ------------------------------------------------


def test_qt_cost_table_hand_case():
    # four leaf children 10+12+8+9 plus a split charge of 2 -> 41
    levels = [np.array([[50.0]]), np.array([[10.0, 12.0], [8.0, 9.0]])]
    assert qt_cost_table(levels, delta_qt=2.0) == 41.0
    assert qt_cost_table(levels, delta_qt=20.0) == 59.0


def test_qt_cost_table_interior_min():
    # a mid-level block whose own cost undercuts its children must be
    # kept whole inside the aggregation
    lvl0 = np.array([[0.0]])
    lvl1 = np.array([[1.0, 100.0], [100.0, 100.0]])
    lvl2 = np.full((4, 4), 30.0)
    # child (0,0): min(1, 4*30+2) = 1; others: min(100, 122) = 100
    assert qt_cost_table([lvl0, lvl1, lvl2], delta_qt=2.0) == 1 + 300 + 2


def test_qt_cost_table_matches_iterative_oracle():
    rng = np.random.default_rng(77)
    for _ in range(25):
        levels = dyadic_tables(rng, depth=3)
        delta = float(rng.integers(0, 1 << 12)) / 64.0
        assert qt_cost_table(levels, delta) == bottom_up_qt_cost(levels, delta)


def test_qt_cost_table_validates_shapes():
    with pytest.raises(ValueError, match="at least two"):
        qt_cost_table([np.zeros((1, 1))], 0.0)
    with pytest.raises(ValueError, match="shape"):
        qt_cost_table([np.zeros((1, 1)), np.zeros((3, 3))], 0.0)


# -- quality metric ---------------------------------------------------------


def test_psnr_values():
    a = np.zeros((8, 8), np.uint8)
    assert psnr(a, a) == math.inf
    b = a.copy()
    b[0, 0] = 255    # MSE = 255^2/64
    assert psnr(a, b) == pytest.approx(10 * math.log10(64.0), rel=1e-12)
    assert psnr_of_mse(1.0) == pytest.approx(48.1308036086791, abs=1e-10)
    with pytest.raises(ValueError, match="shape mismatch"):
        psnr(np.zeros((4, 4)), np.zeros((8, 8)))
    with pytest.raises(ValueError, match="negative"):
        psnr_of_mse(-1.0)

import hashlib

import numpy as np
import pytest

from qtpart.codec import RdCost
from qtpart.features import (FEATURE_COUNT, FEATURE_NAMES, GLCM_STAT_NAMES,
                             HOG_BINS, LAYOUT_HASH, REGION_NAMES, CuContext,
                             FeatureMask, build_vector, describe_layout,
                             glcm5, hog8, mask_indices)
from qtpart.frame_io import CausalPatch, Rect

from helpers import natural_frame


# -- layout ---------------------------------------------------------------


def test_layout_hash_rederived_from_naming_scheme():
    names = ["ni_top_j_pp", "ni_left_j_pp", "ni_top_depth", "ni_left_depth",
             "pi_j_pp", "pi_rate_pp", "pi_dist_pp",
             "bi_height", "bi_width", "bi_qp", "bi_ns_j_pp"]
    for region in ("cu", "q0", "q1", "q2", "q3", "top", "left", "lshape"):
        names += [f"si_{region}_hog_{k}" for k in range(8)]
        names += [f"si_{region}_glcm_{s}"
                  for s in ("entropy", "energy", "homogeneity",
                            "correlation", "dissimilarity")]
    assert len(names) == 115
    assert tuple(names) == FEATURE_NAMES
    digest = hashlib.sha256("\n".join(names).encode()).hexdigest()[:16]
    assert digest == LAYOUT_HASH == "5ea0f3d7d5b524e0"


def test_describe_layout_groups():
    rows = describe_layout()
    assert len(rows) == FEATURE_COUNT
    assert rows[0] == {"index": 0, "name": "ni_top_j_pp", "group": "NI"}
    assert rows[10]["group"] == "BI"
    assert rows[11] == {"index": 11, "name": "si_cu_hog_0", "group": "SI_HOG"}
    assert rows[114]["name"] == "si_lshape_glcm_dissimilarity"
    assert rows[114]["group"] == "SI_GLCM"
    groups = {r["group"] for r in rows}
    assert groups == {"NI", "PI", "BI", "SI_HOG", "SI_GLCM"}


# -- HOG --------------------------------------------------------------------


def test_hog_constant_block_is_zero():
    assert np.array_equal(hog8(np.full((8, 8), 91, np.uint8)), np.zeros(8))


def test_hog_vertical_edge_all_horizontal_gradient():
    block = np.zeros((8, 8), np.uint8)
    block[:, 4:] = 255
    hist = hog8(block)
    assert hist[0] == 1.0 and np.all(hist[1:] == 0.0)


def test_hog_horizontal_edge_hits_90_degree_bin():
    block = np.zeros((8, 8), np.uint8)
    block[4:, :] = 255
    hist = hog8(block)
    assert hist[4] == 1.0  # 90 degrees -> floor(90 * 8 / 180)
    assert hist.sum() == 1.0


def test_hog_diagonal_gradient_bin():
    yy, xx = np.mgrid[0:16, 0:16]
    block = np.clip(8 * (yy + xx), 0, 255).astype(np.uint8)
    hist = hog8(block)
    # dx == dy -> 45 degrees -> bin 2
    assert hist[2] > 0.9


def test_hog_brightness_shift_invariance():
    rng = np.random.default_rng(21)
    for _ in range(50):
        block = rng.integers(0, 200, (8, 8)).astype(np.uint8)
        assert np.allclose(hog8(block), hog8(block + 55), atol=1e-12)


def test_hog_rejects_tiny_regions():
    with pytest.raises(ValueError, match="at least 2x2"):
        hog8(np.zeros((1, 8), np.uint8))


# -- GLCM --------------------------------------------------------------------


def test_glcm_constant_block():
    ent, ene, hom, corr, dis = glcm5(np.full((8, 8), 200, np.uint8))
    assert ent == 0.0 and ene == 1.0 and hom == 1.0 and dis == 0.0
    assert corr == 0.0  # zero-variance convention


def test_glcm_alternating_stripes():
    # columns alternate between levels 1 and 2 (values 32 and 64), so
    # every horizontal pair is (1,2) or (2,1): a two-cell symmetric
    # matrix with p = 0.5 each
    stripes = np.tile(np.array([[32, 64]], np.uint8), (8, 4))
    ent, ene, hom, corr, dis = glcm5(stripes)
    assert ent == pytest.approx(1.0 / 6.0, abs=1e-12)  # 1 bit / 6
    assert ene == pytest.approx(0.5, abs=1e-12)
    assert hom == pytest.approx(0.5, abs=1e-12)
    assert corr == pytest.approx(-1.0, abs=1e-12)
    assert dis == pytest.approx(1.0, abs=1e-12)


def test_glcm_quantizes_to_eight_levels():
    # values inside one 32-wide bucket are indistinguishable
    a = glcm5(np.full((4, 4), 40, np.uint8))
    b = glcm5(np.full((4, 4), 63, np.uint8))
    assert np.array_equal(a, b)


def test_glcm_rejects_tiny_regions():
    with pytest.raises(ValueError, match="at least 2x2"):
        glcm5(np.zeros((4, 1), np.uint8))


# -- masks --------------------------------------------------------------------


def test_mask_from_names_and_back():
    m = FeatureMask.from_names(["NI", "HOG"])
    assert m.ni and m.hog and not (m.pi or m.bi or m.glcm)
    assert m.names() == ["NI", "HOG"]
    assert FeatureMask.none().names() == []
    with pytest.raises(ValueError, match="unknown feature groups"):
        FeatureMask.from_names(["NI", "DC"])


def test_mask_indices_cover_expected_slots():
    assert mask_indices(FeatureMask.none()).sum() == 0
    full = FeatureMask(ni=True, pi=True, bi=True, hog=True, glcm=True)
    assert mask_indices(full).sum() == FEATURE_COUNT
    hog_only = mask_indices(FeatureMask.from_names(["HOG"]))
    assert hog_only.sum() == 8 * HOG_BINS
    names = np.array(FEATURE_NAMES)
    assert all("_hog_" in n for n in names[hog_only])


# -- vector assembly -----------------------------------------------------------


def _synthetic_context(seed=30, size=32, qp=22):
    rng = np.random.default_rng(seed)
    cu = rng.integers(0, 256, (size, size)).astype(np.uint8)
    top = rng.integers(0, 256, (4, size)).astype(np.uint8)
    left = rng.integers(0, 256, (size, 4)).astype(np.uint8)
    corner = rng.integers(0, 256, (4, 4)).astype(np.uint8)
    patch = CausalPatch(cu=cu, top=top, left=left, corner=corner,
                        top_available=True, left_available=True,
                        corner_available=True)
    cost = RdCost.compute(rate=200.0, dist=1500.0, lam=5.0)
    return CuContext(rect=Rect(64, 32, size, size), depth=1, qp=qp,
                     ns_cost=cost, patch=patch,
                     top_neighbor=(2.5, 1), left_neighbor=(3.5, 2),
                     parent=(4.0, 0.5, 2.0))


def test_vector_scalar_slots():
    ctx = _synthetic_context()
    v = build_vector(ctx)
    assert v.dtype == np.float32 and v.shape == (FEATURE_COUNT,)
    assert v[0] == 2.5 and v[2] == pytest.approx(1 / 4)
    assert v[1] == 3.5 and v[3] == pytest.approx(2 / 4)
    assert (v[4], v[5], v[6]) == (4.0, 0.5, 2.0)
    assert v[7] == v[8] == pytest.approx(32 / 128)
    assert v[9] == pytest.approx(22 / 64)        # 0.34375
    assert v[10] == pytest.approx((1500.0 + 5.0 * 200.0) / 1024)


def test_vector_missing_neighbors_and_parent_are_zero():
    ctx = _synthetic_context()
    ctx.top_neighbor = None
    ctx.left_neighbor = None
    ctx.parent = None
    v = build_vector(ctx)
    assert np.all(v[:7] == 0.0)


def test_vector_texture_slots_match_direct_calls():
    ctx = _synthetic_context(seed=31)
    v = build_vector(ctx).astype(np.float64)
    patch = ctx.patch
    cu = patch.cu
    regions = {
        "cu": cu, "q0": cu[:16, :16], "q1": cu[:16, 16:],
        "q2": cu[16:, :16], "q3": cu[16:, 16:],
        "top": patch.top, "left": patch.left,
        "lshape": np.hstack([patch.corner, patch.top, patch.left.T]),
    }
    assert tuple(regions) == REGION_NAMES
    for r, name in enumerate(REGION_NAMES):
        base = 11 + r * 13
        want_hog = hog8(regions[name])
        assert np.allclose(v[base:base + 8],
                           want_hog.astype(np.float32), atol=0)
        ent, ene, hom, corr, dis = glcm5(regions[name])
        want = np.array([ent, ene, hom, (corr + 1) / 2, dis / 7],
                        dtype=np.float32)
        assert np.allclose(v[base + 8:base + 13], want, atol=0)


def test_vector_masked_groups_are_exact_zeros():
    ctx = _synthetic_context(seed=32)
    base = build_vector(ctx)
    for groups in (["NI"], ["PI"], ["BI"], ["HOG"], ["GLCM"],
                   ["NI", "PI", "BI"], ["HOG", "GLCM"]):
        m = FeatureMask.from_names(groups)
        v = build_vector(ctx, m)
        zeroed = mask_indices(m)
        assert np.all(v[zeroed] == 0.0)
        assert np.array_equal(v[~zeroed], base[~zeroed])


def test_vector_si_entries_stay_in_unit_interval():
    rng = np.random.default_rng(33)
    for seed in rng.integers(0, 10_000, 40):
        v = build_vector(_synthetic_context(seed=int(seed)))
        si = v[11:]
        assert si.min() >= 0.0 and si.max() <= 1.0


def test_glcm_stat_names_order():
    assert GLCM_STAT_NAMES == ("entropy", "energy", "homogeneity",
                               "correlation", "dissimilarity")

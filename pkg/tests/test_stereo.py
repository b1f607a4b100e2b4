import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slforce import pattern as pat
from slforce import simulate as sim
from slforce import stereo

from sgm_reference import reference_aggregate, reference_path_cost


def volume(costs, d_min=0):
    costs = np.asarray(costs, dtype=float)
    return stereo.CostVolume(d_min, d_min + costs.shape[2] - 1, costs, np.ones(costs.shape, bool))


# Sobel -------------------------------------------------------------------------


def test_sobel_constant_is_zero():
    assert np.all(stereo.sobel_x(np.full((5, 6), 7.0)) == 0)


def test_sobel_vertical_step():
    img = np.zeros((5, 8))
    img[:, 4:] = 3.0
    g = stereo.sobel_x(img)
    # both columns adjacent to the step see the full 1+2+1 weighting of height 3
    assert np.all(g[1:-1, 3] == 12.0) and np.all(g[1:-1, 4] == 12.0)
    assert np.all(g[:, :3] == 0) and np.all(g[:, 5:] == 0)


def test_sobel_horizontal_step_is_zero():
    img = np.zeros((6, 5))
    img[3:] = 10.0
    assert np.all(stereo.sobel_x(img) == 0)


def test_sobel_rejects_tiny_image():
    with pytest.raises(ValueError):
        stereo.sobel_x(np.zeros((2, 5)))


# Birchfield-Tomasi ---------------------------------------------------------------


def test_bt_identical_constant_rows():
    row = np.full(6, 4.0)
    assert all(stereo.bt_cost(row, row, c, d) == 0 for d in range(3) for c in range(d, 6))


def test_bt_exact_match():
    assert stereo.bt_cost([0, 10, 20], [0, 10, 20], 1, 0) == 0


def test_bt_half_sample_case():
    # left 10 vs right interval [10, 20] (20 and its half samples 10, 20): inside -> 0
    assert stereo.bt_cost([0, 10, 20], [0, 20, 20], 1, 0) == 0.0


def test_bt_disjoint_intervals():
    # left 10 vs right [30, 30] -> 20 ; right 30 vs left interval [5, 15] -> 15
    assert stereo.bt_cost([0, 10, 20], [30, 30, 30], 1, 0) == 15.0


def test_bt_out_of_range_is_invalid():
    assert stereo.bt_cost([1, 2, 3], [1, 2, 3], 0, 1) == stereo.INVALID_COST


@given(arrays(float, 9, elements=st.floats(0, 255)), arrays(float, 9, elements=st.floats(0, 255)),
       st.integers(0, 3))
def test_bt_volume_matches_scalar_definition(left, right, d):
    pair = stereo.StereoPair(np.repeat(left[None, :, None], 3, 2) / 255, np.repeat(right[None, :, None], 3, 2) / 255)
    vol = np.zeros((1, 9, 1))
    valid = np.ones((1, 9, 1), bool)
    gl, gr = pair.grey()
    stereo._bt_volume(gl, gr, d, vol, valid)
    for col in range(9):
        want = stereo.bt_cost(gl[0], gr[0], col, d)
        if want == stereo.INVALID_COST:
            assert not valid[0, col, 0]
        else:
            assert vol[0, col, 0] == pytest.approx(want, abs=1e-9)


# cost volume ----------------------------------------------------------------------


def test_cost_volume_shift_fixture(rng):
    s = 3
    left = rng.random((6, 30, 3))
    right = np.empty_like(left)
    right[:, :-s] = left[:, s:]
    right[:, -s:] = rng.random((6, s, 3))
    vol = stereo.build_cost_volume(stereo.StereoPair(left, right), 0, 6)
    # interior: away from the borders where the Sobel stencil or BT neighbours differ
    assert np.all(vol.costs[:, s + 2 : 30 - s - 2, s] == 0)


def test_cost_volume_invalid_out_of_frame():
    img = np.full((3, 5, 3), 0.5)
    vol = stereo.build_cost_volume(stereo.StereoPair(img, img), 0, 2)
    assert not vol.valid[0, 0, 1] and vol.costs[0, 0, 1] == stereo.INVALID_COST
    assert np.all(vol.costs[vol.valid] == 0)
    assert np.all(vol.costs >= 0)


def test_cost_volume_rejects_bad_range():
    img = np.zeros((3, 5, 3))
    with pytest.raises(ValueError):
        stereo.build_cost_volume(stereo.StereoPair(img, img), 3, 2)


# aggregation ------------------------------------------------------------------------


def test_sgm_params_validation():
    with pytest.raises(ValueError):
        stereo.SgmParams(p1=5, p2=2)
    with pytest.raises(ValueError):
        stereo.SgmParams(path_directions=((1, 0), (1, 0)))
    with pytest.raises(ValueError):
        stereo.SgmParams(path_directions=())


def test_constant_costs_single_path_hand_rolled():
    # 3 pixels x 2 disparities, P1=1, P2=2: min over {c, c+1, c+2} - c leaves L = c
    c = 4.0
    vol = volume(np.full((1, 3, 2), c))
    L = stereo.path_costs(vol, (1, 0), stereo.SgmParams(1, 2, ((1, 0),)))
    assert np.all(L == c)


def test_constant_costs_aggregate_to_paths_times_c():
    vol = volume(np.full((4, 5, 3), 2.5))
    params = stereo.SgmParams()
    agg = stereo.aggregate_paths(vol, params)
    assert np.all(agg.costs == 8 * 2.5)


def test_single_pixel_sums_paths(rng):
    vol = volume(rng.random((1, 1, 4)))
    agg = stereo.aggregate_paths(vol, stereo.SgmParams())
    assert np.allclose(agg.costs, 8 * vol.costs, rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_aggregate_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    h, w, nd = r.integers(1, 9, size=3)
    c = r.integers(0, 60, size=(h, w, nd)).astype(float)
    params = stereo.SgmParams(8, 32)
    got = stereo.aggregate_paths(volume(c), params).costs
    assert np.array_equal(got, reference_aggregate(c, params.path_directions, 8.0, 32.0))


@given(arrays(float, (5, 5, 4), elements=st.floats(0, 100)), st.sampled_from(stereo.EIGHT_PATHS),
       st.floats(0.5, 10), st.floats(10, 50))
def test_path_cost_bounds(c, r, p1, p2):
    params = stereo.SgmParams(p1, p2, (r,))
    L = stereo.path_costs(volume(c), r, params)
    assert np.allclose(L, reference_path_cost(c, r, p1, p2), rtol=0, atol=1e-9)
    excess = L - c
    assert excess.min() >= -1e-9 and excess.max() <= p2 + 1e-9
    spread = L - L.min(axis=2, keepdims=True)
    assert np.all(spread <= c + p2 + 1e-9)


# winner-take-all ----------------------------------------------------------------------


def test_select_disparity_examples():
    costs = np.array([[[5.0, 2.0, 7.0], [2.0, 2.0, 7.0], [1.0, 1.0, 1.0]]])
    dm = stereo.select_disparity(volume(costs))
    assert dm.disparity.tolist() == [[1.0, 0.0, 0.0]]


def test_select_disparity_all_invalid_is_unmatched():
    vol = volume(np.zeros((1, 2, 3)))
    vol.valid[0, 1] = False
    dm = stereo.select_disparity(vol)
    assert dm.provenance[0, 1] == stereo.UNMATCHED and np.isnan(dm.disparity[0, 1])
    assert dm.provenance[0, 0] == stereo.CANDIDATE


@given(arrays(float, (3, 4, 6), elements=st.floats(0, 1e3)))
def test_wta_optimality(s):
    dm = stereo.select_disparity(volume(s, d_min=2))
    idx = dm.disparity.astype(int) - 2
    best = np.take_along_axis(s, idx[..., None], 2)[..., 0]
    assert np.all(best <= s.min(axis=2))


# base colour removal --------------------------------------------------------------------


def test_remove_base_color_examples(rng):
    ref = 0.2 + 0.8 * rng.random((4, 5, 3))
    out, ok = stereo.remove_base_color(ref, ref)
    assert ok.all() and np.allclose(out, 1.0)
    out, _ = stereo.remove_base_color(0.5 * ref, ref)
    assert np.allclose(out, 0.5)


def test_remove_base_color_flags_dark_reference():
    ref = np.ones((2, 2, 3))
    ref[0, 0, 1] = 0.0
    out, ok = stereo.remove_base_color(ref, ref)
    assert not ok[0, 0] and np.all(out[0, 0] == 0) and ok[1, 1]


def test_remove_base_color_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        stereo.remove_base_color(np.ones((2, 2, 3)), np.ones((2, 3, 3)))


def test_tinted_surface_hues_recovered_after_correction():
    spec = pat.PatternSpec(fringe_count=24, fringe_width_px=10, height_px=4)
    texture = pat.generate_pattern(spec).pixels
    tint = np.array([0.9, 0.45, 0.3])
    captured, reference = texture * tint, np.ones_like(texture) * tint
    raw_labels = pat.pixel_labels(captured, spec)[1]
    corrected, ok = stereo.remove_base_color(captured, reference)
    labels = pat.pixel_labels(corrected, spec)[1]
    truth = spec.fringe_symbols[np.arange(240) // 10]
    lit = labels[0] >= 0
    assert ok.all() and lit.mean() > 0.5
    assert np.array_equal(labels[0][lit], truth[lit])
    # without correction the tint pushes some hues off their canonical values
    assert not np.array_equal(raw_labels[0], labels[0])


# verification -------------------------------------------------------------------------------


def candidate_map(disp):
    disp = np.asarray(disp, dtype=float)
    return stereo.DisparityMap(disp, np.full(disp.shape, stereo.CANDIDATE, np.uint8), 0, 20)


def test_verify_equal_ids():
    ids = np.arange(20)[None]
    out = stereo.verify_matches(candidate_map(np.zeros((1, 20))), ids, ids, 8)
    assert np.all(out.provenance == stereo.VERIFIED) and np.all(out.disparity == 0)


def test_verify_relocates_to_planted_offset():
    left = np.full((1, 40), -1)
    right = np.full((1, 40), -1)
    left[0, 30] = 7
    right[0, 23] = 7  # the true correspondent: d = 7
    dm = candidate_map(np.full((1, 40), 10.0))  # initial correspondent x = 20, offset +3
    out = stereo.verify_matches(dm, left, right, radius=8)
    assert out.provenance[0, 30] == stereo.RELOCATED
    assert out.disparity[0, 30] == 10 - 3


def test_verify_rejects_without_candidate():
    left = np.full((1, 40), 5)
    right = np.full((1, 40), 6)
    out = stereo.verify_matches(candidate_map(np.full((1, 40), 2.0)), left, right, radius=4)
    assert np.all(out.provenance[0, 2:] == stereo.REJECTED)
    assert np.all(np.isnan(out.disparity[0, 2:]))


def test_verify_prefers_lowest_aggregated_cost():
    left = np.full((1, 30), -1)
    right = np.full((1, 30), -1)
    left[0, 20] = 3
    right[0, [9, 13]] = 3  # disparities 11 and 7 both carry the ID
    agg = volume(np.zeros((1, 30, 21)))
    agg.costs[0, 20, 11] = 5.0
    agg.costs[0, 20, 7] = 1.0
    out = stereo.verify_matches(candidate_map(np.full((1, 30), 10.0)), left, right, 8, agg)
    assert out.provenance[0, 20] == stereo.RELOCATED and out.disparity[0, 20] == 7


@given(st.integers(0, 2**32 - 1))
def test_verification_soundness(seed):
    r = np.random.default_rng(seed)
    left = r.integers(-1, 4, size=(3, 25))
    right = r.integers(-1, 4, size=(3, 25))
    dm = candidate_map(r.integers(0, 6, size=(3, 25)))
    out = stereo.verify_matches(dm, left, right, radius=3)
    ys, xs = np.nonzero(out.accepted)
    d = out.disparity[ys, xs].astype(int)
    assert np.all(left[ys, xs] == right[ys, xs - d])
    assert np.all((d >= 0) & (d <= 20))


# full matcher ----------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_plane():
    # 320x240, f=400, B=8 mm, z=0.10 m -> disparity 32
    scene = sim.SceneConfig(width=320, height=240, focal_px=400, baseline_m=0.008,
                            fringe_count=32, fringe_width_px=10, d_min=16, d_max=48)
    return scene, sim.render_stereo(scene, sim.plane_mesh(0.10, 0.2, 0.2))


def test_match_plane_within_one_pixel(small_plane):
    scene, r = small_plane
    dm = stereo.match(r.pair, scene.pattern_spec, scene.match_config, r.reference)
    # score pixels whose true correspondent (x - 32) exists in the right view
    dec = (dm.left_ids >= 0) & (np.arange(scene.width) >= 32)[None, :]
    good = dec & (np.abs(np.nan_to_num(dm.disparity, nan=-1e9) - 32.0) <= 1)
    assert good.sum() >= 0.95 * dec.sum()
    assert np.all(np.isfinite(dm.disparity[dm.accepted]))


def test_match_is_deterministic(small_plane):
    scene, r = small_plane
    a = stereo.match(r.pair, scene.pattern_spec, scene.match_config, r.reference)
    b = stereo.match(r.pair, scene.pattern_spec, scene.match_config, r.reference)
    assert np.array_equal(a.disparity, b.disparity, equal_nan=True)
    assert np.array_equal(a.provenance, b.provenance)


def test_match_identical_views_gives_zero_disparity(small_plane):
    scene, r = small_plane
    pair = stereo.StereoPair(r.pair.left, r.pair.left)
    ref = stereo.StereoPair(r.reference.left, r.reference.left)
    cfg = stereo.MatchConfig(0, 16, 8)
    dm = stereo.match(pair, scene.pattern_spec, cfg, ref)
    dec = dm.left_ids >= 0
    assert np.all(dm.disparity[dec] == 0)

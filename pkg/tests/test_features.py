import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from wlmicd import features as F
from wlmicd.eroc import Roi

windows = arrays(np.uint8, (3, 3), elements=st.integers(0, 40))
windows5 = arrays(np.uint8, (5, 5), elements=st.integers(0, 255))

SPIKE_A = np.array([[100, 100, 120], [120, 140, 140], [100, 120, 140]])


def spike_b():
    b = SPIKE_A.copy()
    b[0, 1] += 100
    return b


def center_change_b():
    b = SPIKE_A.copy()
    b[1, 1] += 100
    return b


def test_window_pair_edge_replication():
    a = np.arange(16, dtype=np.uint8).reshape(4, 4)
    wa, wb = F.window_pair(a, a, 0, 0)
    assert wa.tolist() == [[0, 0, 1], [0, 0, 1], [4, 4, 5]]
    with pytest.raises(ValueError):
        F.window_pair(a, a, 1, 1, size=4)


def test_chebyshev_weights():
    w = F.chebyshev_weights(5)
    assert w[2, 2] == 0
    assert w[1, 2] == 1 and w[0, 0] == 0.5 and w[0, 3] == 0.5


# ---- joint histogram -------------------------------------------------------

def test_identical_windows_are_diagonal():
    h = F.joint_histogram(SPIKE_A, SPIKE_A)
    assert all(x == y for x, y in h)
    assert sum(h.values()) == 9


def test_single_spike_counts():
    h = F.joint_histogram(SPIKE_A, spike_b())
    off = {k: v for k, v in h.items() if k[0] != k[1]}
    assert off == {(100, 200): 1}
    assert sum(v for k, v in h.items() if k[0] == k[1]) == 8


def test_delta_boundary():
    h = F.joint_histogram(SPIKE_A, SPIKE_A + 4)
    assert all(x == y for x, y in h)
    h = F.joint_histogram(SPIKE_A, SPIKE_A + 5)
    assert not any(x == y for x, y in h)


@given(windows, windows)
def test_joint_histogram_marginals(wa, wb):
    h = F.joint_histogram(wa, wb)
    assert sum(h.values()) == 9
    mx = {}
    for (x, _), c in h.items():
        mx[x] = mx.get(x, 0) + c
    values, counts = np.unique(wa, return_counts=True)
    assert mx == dict(zip(values.tolist(), counts.tolist()))
    merged = [y for _, y in oracles.merged_pairs(wa, wb, 4)]
    my = {}
    for (_, y), c in h.items():
        my[y] = my.get(y, 0) + c
    assert my == {v: merged.count(v) for v in set(merged)}


# ---- lmi / entropy ---------------------------------------------------------

@given(windows, windows, st.integers(0, 8))
def test_lmi_matches_table_oracle(wa, wb, delta):
    assert F.lmi(wa, wb, delta) == pytest.approx(oracles.lmi_table(wa, wb, delta), abs=1e-9)


@given(windows, windows)
def test_lmi_nonnegative(wa, wb):
    assert F.lmi(wa, wb) >= -1e-12


@given(windows)
def test_self_information_is_entropy(w):
    assert F.lmi(w, w) == pytest.approx(oracles.entropy(w), abs=1e-9)
    assert F.window_entropy(w) == pytest.approx(oracles.entropy(w), abs=1e-9)


def test_constant_windows_have_zero_lmi():
    c = np.full((3, 3), 7)
    assert F.lmi(c, c) == 0


@given(windows, windows)
def test_lmi_symmetric_without_merging(wa, wb):
    assert F.lmi(wa, wb, 0) == pytest.approx(F.lmi(wb, wa, 0), abs=1e-12)


def test_merging_breaks_lmi_symmetry():
    a = np.array([[0, 4, 4]] * 3)
    b = np.array([[4, 4, 20]] * 3)
    assert F.lmi(a, b) == pytest.approx(oracles.entropy(a))
    assert F.lmi(b, a) == pytest.approx(0.0)


def test_lmi_sim_rate_anchored_on_first_window():
    a = np.array([[0, 0, 1], [1, 0, 0], [1, 1, 0]])
    b = np.arange(9).reshape(3, 3)
    assert F.sim_rate(a, b, "lmi", 0) == 100.0
    assert F.sim_rate(b, a, "lmi", 0) < 50.0


# ---- wlmi ------------------------------------------------------------------

@given(windows, windows, st.integers(0, 8))
def test_wlmi_matches_loop_oracle(wa, wb, delta):
    assert F.wlmi(wa, wb, delta) == pytest.approx(oracles.wlmi_loop(wa, wb, delta), abs=1e-9)


@given(windows5, windows5)
def test_wlmi_matches_loop_oracle_5x5(wa, wb):
    assert F.wlmi(wa, wb) == pytest.approx(oracles.wlmi_loop(wa, wb), abs=1e-9)


def test_center_change_matches_oracle():
    b = center_change_b()
    assert F.wlmi(SPIKE_A, b) == pytest.approx(oracles.wlmi_loop(SPIKE_A, b), abs=1e-12)


def test_wlmi_weights():
    beta = F.wlmi_weights(SPIKE_A, SPIKE_A)
    assert beta[1, 1] == 2.0
    beta = F.wlmi_weights(SPIKE_A, center_change_b())
    assert beta[1, 1] == pytest.approx(2.0 / math.exp(100 / 255))
    assert beta[0, 0] == 1.0


@given(windows)
def test_self_similarity_is_full(w):
    if len(np.unique(w)) > 1:
        assert F.wlmi(w, w) > 0
    for method in ("lmi", "wlmi"):
        assert F.sim_rate(w, w, method) == 100.0


@given(windows, windows, st.sampled_from(["lmi", "wlmi"]))
def test_sim_rate_matches_oracle_and_bounds(wa, wb, method):
    rate = F.sim_rate(wa, wb, method)
    assert 0.0 <= rate <= 100.0
    assert rate == pytest.approx(oracles.sim_rate_loop(wa, wb, method), abs=1e-9)


def test_constant_reference_rule():
    c = np.full((3, 3), 50)
    assert F.sim_rate(c, c + 100, "wlmi") == 0.0
    assert F.sim_rate(c, c + 3, "lmi") == 100.0


def test_sim_rate_from_values():
    assert F.sim_rate_from_values(8.78, 15.79) == pytest.approx(55.6, abs=0.1)
    assert F.sim_rate_from_values(2.29, 5.87) == pytest.approx(39.0, abs=0.1)
    assert F.sim_rate_from_values(3, 2) == 100.0
    assert F.sim_rate_from_values(-1, 2) == 0.0
    with pytest.raises(ValueError):
        F.sim_rate_from_values(1, 0)


# ---- GLRT ------------------------------------------------------------------

def test_glrt_hand_value():
    a = np.full((3, 3), 100)
    assert F.glrt_statistic(a, a + 10, sigma=5) == pytest.approx(3.0)
    assert F.glrt_statistic(a, a, sigma=5) == 0


@given(windows, windows, st.floats(0.1, 50))
def test_glrt_symmetric(wa, wb, sigma):
    assert F.glrt_statistic(wa, wb, sigma) == F.glrt_statistic(wb, wa, sigma)


def test_glrt_requires_positive_sigma():
    with pytest.raises(ValueError):
        F.glrt_statistic(SPIKE_A, SPIKE_A, 0)
    with pytest.raises(ValueError):
        F.GlrtConfig(sigma=0)


def test_noise_sigma_estimate():
    rng = np.random.default_rng(11)
    assert F.estimate_noise_sigma(np.zeros((4, 4))) == 0
    assert F.estimate_noise_sigma(np.full((4, 4), 10)) == 0
    estimates = []
    for _ in range(50):
        a = 100 + rng.normal(0, 5, 10_000)
        b = 100 + rng.normal(0, 5, 10_000)
        estimates.append(F.estimate_noise_sigma(a - b))
    assert abs(np.mean(estimates) - 5) < 0.25
    assert max(abs(e - 5) for e in estimates) < 0.25


def test_gamma_calibration_agrees():
    g1 = F.calibrate_glrt_gamma(5.0, rng=1)
    g2 = F.calibrate_glrt_gamma(5.0, rng=2)
    closed = F.glrt_gamma(0.05)
    assert abs(g1 - g2) / g2 < 0.05
    assert abs(g1 - closed) / closed < 0.05
    assert closed == pytest.approx(1.3859, abs=1e-3)


def test_spike_fixture():
    b = spike_b()
    assert F.glrt_decide(SPIKE_A, b, F.GlrtConfig(sigma=5, gamma=F.glrt_gamma(0.05)))
    assert F.sim_rate(SPIKE_A, b, "wlmi") >= 50
    assert not F.is_change(F.sim_rate(SPIKE_A, b, "wlmi"))


def test_center_change_fixture():
    b = center_change_b()
    assert F.sim_rate(SPIKE_A, b, "wlmi") < F.sim_rate(SPIKE_A, b, "lmi")


# ---- maps ------------------------------------------------------------------

def _pair(seed, shape=(20, 23)):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 60, shape).astype(np.uint8)
    b = a.copy()
    b[5:12, 6:15] = rng.integers(0, 256, (7, 9))
    return a, b


@pytest.mark.parametrize("method", ["lmi", "wlmi"])
def test_map_matches_scalar(method):
    a, b = _pair(0)
    roi = Roi(2, 17, 1, 20, empty=False)
    m = F.sim_rate_map(a, b, roi, method, tile_rows=5)
    assert np.isnan(m.values[~roi.mask(a.shape)]).all()
    for i in range(roi.top, roi.bottom + 1):
        for j in range(roi.left, roi.right + 1):
            wa, wb = F.window_pair(a, b, i, j)
            assert m.values[i, j] == pytest.approx(F.sim_rate(wa, wb, method), abs=1e-9)


def test_glrt_map_matches_scalar():
    a, b = _pair(1)
    m = F.sim_rate_map(a, b, None, "glrt", window=5, sigma=3.0)
    assert m.higher_is_change
    for i, j in [(0, 0), (8, 9), (19, 22)]:
        wa, wb = F.window_pair(a, b, i, j, 5)
        assert m.values[i, j] == pytest.approx(F.glrt_statistic(wa, wb, 3.0))


def test_map_identical_is_full_similarity():
    a, _ = _pair(2)
    assert np.all(F.sim_rate_map(a, a, None, "wlmi").values == 100)


@pytest.mark.parametrize("method", ["lmi", "wlmi"])
def test_blob_minima_inside_blob(method):
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (32, 32)).astype(np.uint8)
    b = a.copy()
    yy, xx = np.indices(a.shape)
    blob = (yy - 16) ** 2 + (xx - 14) ** 2 <= 16
    b[blob] = rng.integers(0, 256, blob.sum())
    v = F.sim_rate_map(a, b, None, method).values
    assert blob[v == v.min()].all()


@pytest.mark.parametrize("method", ["lmi", "wlmi", "glrt"])
def test_map_independent_of_tiling_and_threads(method):
    a, b = _pair(3, (40, 17))
    ref = F.sim_rate_map(a, b, None, method, sigma=2.0, tile_rows=1000)
    for tile, jobs in [(1, 1), (7, 3), (13, 2)]:
        other = F.sim_rate_map(a, b, None, method, sigma=2.0, tile_rows=tile, jobs=jobs)
        np.testing.assert_array_equal(other.values, ref.values)


def test_empty_roi_map():
    a, b = _pair(4)
    m = F.sim_rate_map(a, b, Roi.none())
    assert np.isnan(m.values).all()


def test_map_argument_errors():
    a, b = _pair(5)
    with pytest.raises(ValueError):
        F.sim_rate_map(a, b, method="glrt")
    with pytest.raises(ValueError):
        F.sim_rate_map(a, b, method="nmi")
    with pytest.raises(ValueError):
        F.sim_rate_map(a, b, window=4)

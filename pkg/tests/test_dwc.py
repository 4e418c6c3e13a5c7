import numpy as np
import pandas as pd
import pytest
from _dwc_oracle import brute_force, random_windows
from hypothesis import given
from hypothesis import strategies as st

from noxdwc import dwc
from noxdwc.errors import DataError
from noxdwc.obd_ingest import PARAMETER_SETS, load_records
from noxdwc.config import sample_dataset


def windows_from(div, bins=None, L=3, threshold=30.0, seg=None):
    n = len(div)
    seg = np.zeros(n, dtype=np.int64) if seg is None else np.asarray(seg)
    return dwc.build_windows(np.asarray(div, float), seg, np.arange(n, dtype=float), L, threshold, bins or {})


def labelled(divergent, bins=None, signed=None):
    """WindowSet with L = 1 so each record is its own window."""
    divergent = np.asarray(divergent, bool)
    div = np.where(divergent, 50.0, 0.0) if signed is None else np.asarray(signed, float)
    return windows_from(div, bins or {"X": np.zeros(len(divergent), dtype=np.int64)}, L=1)


def test_bin_map_worked_example():
    bm = dwc.build_bin_map(pd.DataFrame({"engRPM": [800.0, 1800.0]}), ["engRPM"])
    assert bm.bin("engRPM", [950.0, 800.0, 1800.0, 1799.9]).tolist() == [1, 0, 9, 9]
    assert bm.bin("engRPM", [np.nan]).tolist() == [-1]


def test_bin_map_constant_attribute_named():
    with pytest.raises(DataError, match="EngTq"):
        dwc.build_bin_map(pd.DataFrame({"EngTq": [5.0, 5.0]}), ["EngTq"])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50).filter(lambda v: min(v) < max(v)))
def test_bins_partition_range(values):
    bm = dwc.build_bin_map(pd.DataFrame({"v": values}), ["v"])
    b = bm.bin("v", values)
    assert ((b >= 0) & (b <= 9)).all()
    assert b[int(np.argmax(values))] == 9 and b[int(np.argmin(values))] == 0
    order = np.argsort(values, kind="stable")
    assert (np.diff(b[order]) >= 0).all()


def test_window_divergence_rule():
    assert not windows_from([5, 5, 5]).divergent[0]
    assert windows_from([20, 20, 20]).divergent[0]
    assert windows_from([-20, 20, -20]).divergent[0]
    assert windows_from([10, 10, 10]).abs_sums[0] == 30.0 and not windows_from([10, 10, 10]).divergent[0]


def test_every_mode():
    div = np.array([25.0, 1.0, 25.0])
    n = 3
    ws = dwc.build_windows(div, np.zeros(n), np.arange(n, dtype=float), 3, 30.0, mode="every")
    assert not ws.divergent[0]
    with pytest.raises(ValueError):
        dwc.build_windows(div, np.zeros(n), np.arange(n, dtype=float), 3, 30.0, mode="max")


@given(st.integers(0, 40), st.integers(1, 5))
def test_window_count(n, L):
    ws = windows_from(np.ones(n), L=L)
    assert len(ws) == max(n - L + 1, 0)


def test_windows_respect_segments_and_gaps():
    seg = [0, 0, 0, 0, 1, 1, 1]
    ws = windows_from(np.ones(7), seg=seg)
    assert ws.starts.tolist() == [0, 1, 4]
    div = np.ones(7)
    div[5] = np.nan
    assert windows_from(div).starts.tolist() == [0, 1, 2]


def test_support_one_of_four():
    ws = labelled([True, False, False, False], {"X": np.array([1, 1, 2, 2])})
    assert dwc.support([("X", (1,))], ws) == 0.25
    assert dwc.support([("X", (2,))], ws) == 0.0
    with pytest.raises(ValueError):
        dwc.support([], ws)
    with pytest.raises(ValueError):
        dwc.support([("X", (1,))], windows_from([]))


def test_cross_k_only_divergent_instances_is_inverse_fraction():
    divergent = np.zeros(200, bool)
    divergent[::10] = True
    ws = labelled(divergent)
    assert dwc.cross_k(np.flatnonzero(divergent), ws) == pytest.approx(10.0, rel=1e-15)


def test_cross_k_ratio_example():
    # 50 instances, one divergent hit in total, divergent rate 0.1: 0.02 / 0.1 = 0.2
    divergent = np.zeros(100, bool)
    divergent[[0, 60, 61, 62, 63, 64, 65, 66, 67, 68]] = True
    ws = labelled(divergent)
    assert dwc.cross_k(np.arange(50), ws) == 0.2


def test_cross_k_delta_window():
    divergent = np.zeros(10, bool)
    divergent[[1, 2]] = True
    ws = labelled(divergent)
    # instance at t = 0 sees windows 0..2, two of them divergent
    assert dwc.cross_k([0], ws, delta=2.0) == pytest.approx(2 / 0.2)
    # near the end only 2 of 3 start positions exist; edge correction rescales
    assert dwc.cross_k([8], ws, delta=2.0) == 0.0
    divergent[9] = True
    ws = labelled(divergent)
    assert dwc.cross_k([8], ws, delta=2.0) == pytest.approx(1 * 3 / 2 / 0.3)
    assert dwc.cross_k([8], ws, delta=2.0, edge_correction=False) == pytest.approx(1 / 0.3)


def test_cross_k_errors():
    ws = labelled([False, False])
    with pytest.raises(ValueError):
        dwc.cross_k([0], ws)
    with pytest.raises(ValueError):
        dwc.cross_k([], labelled([True]))


def test_bias_labels():
    ws = labelled([True] * 4, signed=[40.0, 40.0, -40.0, -40.0])
    assert dwc.classify_bias([0, 1], ws)["bias"] == "over-predicted"
    assert dwc.classify_bias([2, 3], ws)["bias"] == "under-predicted"
    tie = dwc.classify_bias([0, 1, 2, 3], ws)
    assert tie == {"over": 2, "under": 2, "zero": 0, "bias": "mixed"}
    assert dwc.classify_bias([0, 1, 2], ws)["bias"] == "over-predicted"


def test_constant_bin_singleton_emitted():
    n = 400
    divergent = np.zeros(n, bool)
    divergent[::20] = True  # fraction 0.05
    bins = {"X": np.where(divergent, 7, np.arange(n) % 7), "Y": np.arange(n) % 10}
    ws = dwc.build_windows(np.where(divergent, 50.0, 0.0), np.zeros(n), np.arange(n, dtype=float), 1, 30.0, bins)
    pats = dwc.mine_patterns(ws, minsupp=0.01, epsilon=2.5)
    top = pats[0]
    assert top.items == (("X", (7,)),)
    assert top.support == 0.05
    assert top.cross_k == pytest.approx(20.0)
    assert top.exclusive_rank == 1


def test_minsupp_one_yields_nothing():
    assert dwc.mine_patterns(random_windows(0), minsupp=1.0, epsilon=0.0) == []
    with pytest.raises(ValueError):
        dwc.mine_patterns(random_windows(0), minsupp=0.0)


def test_no_divergent_windows():
    assert dwc.mine_patterns(windows_from(np.zeros(20), {"X": np.zeros(20, dtype=np.int64)})) == []


def _as_tuples(patterns):
    return [(p.items, p.support, p.cross_k) for p in patterns]


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("delta", [0.0, 2.0])
def test_matches_brute_force(seed, delta):
    ws = random_windows(seed, segments=bool(seed % 2))
    got = dwc.mine_patterns(ws, minsupp=0.01, epsilon=1.0, delta=delta)
    assert _as_tuples(got) == brute_force(ws, 0.01, 1.0, delta)


def test_brute_force_without_edge_correction():
    ws = random_windows(11)
    got = dwc.mine_patterns(ws, 0.02, 0.5, delta=3.0, edge_correction=False)
    assert _as_tuples(got) == brute_force(ws, 0.02, 0.5, 3.0, edge_correction=False)


@given(st.integers(0, 10_000))
def test_antimonotone_support(seed):
    ws = random_windows(seed, n_windows=80)
    w = ws.window(int(np.flatnonzero(ws.divergent)[0]) if ws.n_divergent else 0)
    items = sorted(w.sequences.items())
    for k in range(1, len(items)):
        assert dwc.support(items[: k + 1], ws) <= dwc.support(items[:k], ws)


@given(st.integers(0, 10_000))
def test_emitted_patterns_meet_thresholds(seed):
    ws = random_windows(seed, n_windows=60)
    for p in dwc.mine_patterns(ws, 0.03, 1.5):
        assert p.support >= 0.03 and p.cross_k >= 1.5
        assert ws.contains(p.items)[p.instances].all()
        assert p.support == dwc.support(p.items, ws)
        assert p.over + p.under + p.zero == p.count


def test_thread_count_invariance():
    ws = random_windows(3)
    serial = dwc.mine_patterns(ws, 0.01, 1.0)
    parallel = dwc.mine_patterns(ws, 0.01, 1.0, n_jobs=4)
    assert _as_tuples(serial) == _as_tuples(parallel)
    assert [p.exclusive_rank for p in serial] == [p.exclusive_rank for p in parallel]


def test_constant_only_filters_transient_items():
    ws = random_windows(4)
    for p in dwc.mine_patterns(ws, 0.01, 0.0, constant_only=True):
        assert all(len(set(seq)) == 1 for _, seq in p.items)


def test_exclusive_ranks_disjoint():
    ws = random_windows(5)
    pats = dwc.mine_patterns(ws, 0.01, 1.0)
    picked = [p for p in pats if p.exclusive_rank is not None]
    assert [p.exclusive_rank for p in picked] == list(range(1, len(picked) + 1))
    seen = set()
    for p in picked:
        d = {int(i) for i in p.instances if ws.divergent[i]}
        assert not d & seen
        seen |= d


def test_mine_sample_report():
    rs = load_records(sample_dataset())
    div = np.sin(np.arange(len(rs)) / 7.0) * 40.0
    res = dwc.mine(rs, div, set_id=3)
    rep = res.report()
    assert rep["attributes"] == list(PARAMETER_SETS[3])
    assert rep["n_windows"] == len(res.windows)
    for row in rep["patterns"]:
        for it in row["items"]:
            sym = it["notation"].split("_")[0]
            assert sym == dwc.symbol(PARAMETER_SETS[3][it["attribute"]])
    assert res.report() == rep  # deterministic
    with pytest.raises(ValueError):
        dwc.mine(rs, div, set_id=7)


def test_notation():
    assert dwc.notation("engRPM", "engRPM", (8, 8, 8)) == "N_8 N_8 N_8"
    assert dwc.symbol("EngTqdelta") == "dL"

import math

import numpy as np
import pytest

from cdrlab import anomaly as an
from cdrlab.records import Tower

from conftest import T0, DAY, data, make_dataset, sms, topup, voice


def series(values, bin_width=3600, start=T0, entity=("global",)):
    return an.TimeSeries(entity=entity, bin_width=bin_width, start=start,
                         values=np.asarray(values, dtype=float))


# -- binning -----------------------------------------------------------------------

def test_bin_series_counts_voice_only():
    cdrs = [
        voice("A", "B", "T1", T0 + 100),
        voice("B", "A", "T2", T0 + 200),
        sms("A", "B", "T1", T0 + 300),          # not a call
        data("A", "T1", T0 + 400),               # not a call
        voice("A", "B", "T1", T0 + 3700),        # second bin
    ]
    ds = make_dataset(cdrs, window=(T0, T0 + 2 * 3600))
    ts = an.bin_series(ds, ("global",), 3600)
    assert list(ts.values) == [2.0, 1.0]
    assert ts.bin_start(1) == T0 + 3600
    tower = an.bin_series(ds, ("tower", "T1"), 3600)
    assert list(tower.values) == [1.0, 1.0]


def test_bin_series_district_and_recharges():
    cdrs = [voice("A", "B", "T1", T0 + 100), voice("A", "B", "T2", T0 + 200)]
    tops = [
        topup("A", T0 + 300, 50.0, retailer_tower="T1"),
        topup("B", T0 + 400, 20.0, retailer_tower="T2"),
        topup("C", T0 + 500, 70.0, retailer_tower=None),
    ]
    ds = make_dataset(cdrs, tops, window=(T0, T0 + 3600))
    area_map = {"T1": "D1", "T2": "D2"}
    d1 = an.bin_series(ds, ("district", "D1"), 3600, area_map=area_map)
    assert list(d1.values) == [1.0]
    amt = an.bin_series(ds, ("district", "D1"), 3600, measure="recharge_amount", area_map=area_map)
    assert list(amt.values) == [50.0]
    # unlocated top-ups count globally but belong to no tower or district
    g = an.bin_series(ds, ("global",), 3600, measure="recharge_count")
    assert list(g.values) == [3.0]
    cnt = an.bin_series(ds, ("tower", "T2"), 3600, measure="recharge_count")
    assert list(cnt.values) == [1.0]


def test_bin_series_validation():
    ds = make_dataset([voice("A", "B", "T1", T0 + 100)], window=(T0, T0 + 5400))
    with pytest.raises(ValueError, match="measure"):
        an.bin_series(ds, ("global",), 3600, measure="sms_count")
    with pytest.raises(ValueError, match="bin_width"):
        an.bin_series(ds, ("global",), 0)
    with pytest.raises(ValueError, match="entity kind"):
        an.bin_series(ds, ("region", "x"), 3600)
    with pytest.raises(ValueError, match="area_map"):
        an.bin_series(ds, ("district", "D1"), 3600)
    with pytest.raises(ValueError, match="missing from area_map"):
        an.bin_series(ds, ("district", "D1"), 3600, area_map={"TX": "D1"})
    # ragged tail still gets its own bin
    assert len(an.bin_series(ds, ("global",), 3600).values) == 2


# -- sigma rule ----------------------------------------------------------------------

def test_detect_anomalies_global_mean_hand_computed():
    ts = series([10.0] * 20 + [100.0])
    report = an.detect_anomalies(ts, baseline="global_mean", threshold_sigma=3.0)
    assert report.flagged() == {20}
    flag = report.flags[0]
    assert flag.direction == "increase" and not flag.degenerate
    assert flag.baseline_mean == pytest.approx(100 / 7)
    assert flag.baseline_std == pytest.approx(math.sqrt(18900) / 7)
    assert flag.z == pytest.approx(600 / math.sqrt(18900), abs=1e-12)
    # the same spike hides from a looser threshold
    assert an.detect_anomalies(ts, baseline="global_mean", threshold_sigma=5.0).flags == []


def test_detect_anomalies_decrease_direction():
    ts = series([50.0] * 20 + [0.0])
    report = an.detect_anomalies(ts, baseline="global_mean", threshold_sigma=3.0)
    assert [f.direction for f in report.flags] == ["decrease"]


def test_detect_anomalies_hour_of_day_isolates_cells():
    # 12 days of hourly bins; hour 5 carries a spike on the last day
    values = np.tile(np.arange(24, dtype=float) + 10.0, 12)
    values[11 * 24 + 5] = 500.0
    ts = series(values)
    report = an.detect_anomalies(ts, baseline="hour_of_day", threshold_sigma=3.0)
    assert report.flagged() == {11 * 24 + 5}
    # every other cell is constant across days, hence degenerate but quiet
    assert len(report.degenerate_cells) == 23


def test_detect_anomalies_inclusive_baseline_absorbs_small_cells():
    # the tested bin is part of its own baseline cell, so a bump in a
    # three-sample cell cannot clear 3 sigma and de-degenerates its cell
    values = [7.0] * 24 * 3
    values[30] = 7.5
    report = an.detect_anomalies(series(values), baseline="hour_of_day")
    assert report.flags == []
    assert len(report.degenerate_cells) == 23
    assert 6 not in report.degenerate_cells  # the bumped hour has variance now


def test_detect_anomalies_weekday_hour_constant_series():
    values = [3.0] * 24 * 14  # two full weeks, hourly
    report = an.detect_anomalies(series(values), baseline="weekday_hour")
    assert report.flags == [] and len(report.degenerate_cells) == 7 * 24


def test_detect_anomalies_requires_two_samples_per_cell():
    with pytest.raises(ValueError, match="need at least 2"):
        an.detect_anomalies(series([1.0] * 24), baseline="hour_of_day")
    with pytest.raises(ValueError, match="baseline"):
        an.detect_anomalies(series([1.0] * 48), baseline="median")


def test_detect_anomalies_affine_invariance():
    rng = np.random.default_rng(0)
    base = rng.integers(0, 100, size=24 * 12).astype(float)
    base[100] = 10_000.0
    ts = series(base)
    ref = an.detect_anomalies(ts, baseline="hour_of_day")
    # powers of two scale exactly; z-scores and flag sets must not move
    for a, b in [(2.0, 0.0), (0.5, 100.0), (4.0, -7.0)]:
        scaled = series(base * a + b)
        rep = an.detect_anomalies(scaled, baseline="hour_of_day")
        assert rep.flagged() == ref.flagged()
        for f, g in zip(rep.flags, ref.flags):
            assert f.z == g.z and f.direction == g.direction


def test_minmax_normalize():
    ts = an.minmax_normalize(series([2.0, 4.0, 6.0]))
    assert list(ts.values) == [0.0, 0.5, 1.0]
    flat = an.minmax_normalize(series([5.0, 5.0]))
    assert list(flat.values) == [0.0, 0.0]


# -- flows -------------------------------------------------------------------------

AREA_TOWERS = {
    "T1": Tower("T1", 90.0, 23.0),
    "T2": Tower("T2", 91.0, 23.0),   # ~102 km east of T1
    "T3": Tower("T3", 90.02, 23.0),  # ~2 km east of T1
}
AREA_MAP = {"T1": "west", "T2": "east", "T3": "near"}


def test_area_centroids():
    cents = an.area_centroids(AREA_TOWERS, {"T1": "w", "T3": "w", "T2": "e"})
    assert cents["w"] == pytest.approx((90.01, 23.0))
    assert cents["e"] == (91.0, 23.0)
    assert an.area_centroids({}, {"T9": "x"}) == {}


def test_build_flow_network_first_last():
    cdrs = [
        voice("A", "B", "T1", T0 + 8 * 3600),
        voice("A", "B", "T2", T0 + 18 * 3600),
        voice("B", "A", "T2", T0 + 9 * 3600),   # stays east all day
        voice("B", "A", "T2", T0 + 19 * 3600),
        voice("C", "A", "T1", T0 + 9 * 3600),
        voice("C", "A", "T2", T0 + 12 * 3600),
        voice("C", "A", "T1", T0 + 20 * 3600),  # round trip: first == last
    ]
    ds = make_dataset(cdrs, towers=AREA_TOWERS, window=(T0, T0 + DAY))
    fn = an.build_flow_network(ds, T0 + 5, AREA_MAP, min_count=1)
    assert fn.day == T0
    assert fn.od == {("west", "east"): 1}

    per = an.build_flow_network(ds, T0, AREA_MAP, min_count=1, mode="per_transition")
    assert per.od == {("west", "east"): 2, ("east", "west"): 1}


def test_build_flow_network_filters():
    cdrs = [
        voice("A", "B", "T1", T0 + 8 * 3600),
        voice("A", "B", "T3", T0 + 18 * 3600),  # west -> near: ~2 km apart
    ]
    ds = make_dataset(cdrs, towers=AREA_TOWERS, window=(T0, T0 + DAY))
    assert an.build_flow_network(ds, T0, AREA_MAP, min_count=1).od == {}
    keep = an.build_flow_network(ds, T0, AREA_MAP, min_count=1, min_distance_km=0.0)
    assert keep.od == {("west", "near"): 1}
    assert an.build_flow_network(ds, T0, AREA_MAP, min_count=2, min_distance_km=0.0).od == {}
    with pytest.raises(ValueError, match="unknown mode"):
        an.build_flow_network(ds, T0, AREA_MAP, mode="hourly")
    with pytest.raises(ValueError, match="missing from area_map"):
        an.build_flow_network(ds, T0, {"T1": "west"})


def test_flow_symmetry():
    fn1 = an.FlowNetwork(T0, {("a", "b"): 10, ("b", "a"): 10, ("a", "c"): 30, ("c", "a"): 28})
    fn2 = an.FlowNetwork(T0 + DAY, {("a", "b"): 12, ("b", "a"): 12, ("a", "c"): 30, ("c", "a"): 32})
    r = an.flow_symmetry([fn1, fn2])
    x = np.array([11.0, 30.0])
    y = np.array([11.0, 30.0])
    assert r == pytest.approx(np.corrcoef(x, y)[0, 1])
    with pytest.raises(ValueError, match="at least two pairs"):
        an.flow_symmetry([an.FlowNetwork(T0, {("a", "b"): 5})])
    with pytest.raises(ValueError, match="no flow networks"):
        an.flow_symmetry([])
    flat = [an.FlowNetwork(T0, {("a", "b"): 5, ("c", "d"): 5})]
    with pytest.raises(ValueError, match="degenerate"):
        an.flow_symmetry(flat)


def flows_from(series_by_pair, n_days):
    out = []
    for i in range(n_days):
        od = {pair: vals[i] for pair, vals in series_by_pair.items() if vals[i] > 0}
        out.append(an.FlowNetwork(T0 + i * DAY, od))
    return out


def test_detect_flow_anomalies_pooled_sigma_hand_computed():
    # 15 consecutive days starting on a Sunday; every weekday cell holds the
    # value pair (8, 12) inside the 14 baseline days, so each contributes
    # residual 2 twice: pooled sigma = sqrt(56 / (14 - 7)) = sqrt(8)
    vals = [8, 12] * 7 + [50]
    flows = flows_from({("a", "b"): vals, ("a", "c"): [8] * 14 + [0]}, 15)
    baseline = {T0 + i * DAY for i in range(14)}
    reports = an.detect_flow_anomalies(flows, threshold_sigma=3.0, baseline_days=baseline)
    assert set(reports) == {("a", "b")}  # the other pair has a zero-flow day
    rep = reports[("a", "b")]
    assert rep.flagged() == {14}
    f = rep.flags[0]
    assert f.baseline_mean == pytest.approx(10.0)  # weekday-6 mean of days 0 and 7
    assert f.baseline_std == pytest.approx(math.sqrt(8.0))
    assert f.z == pytest.approx(40 / math.sqrt(8.0))
    assert f.direction == "increase"


def test_detect_flow_anomalies_degenerate_baseline():
    vals = [10] * 14 + [50]
    flows = flows_from({("a", "b"): vals, ("b", "a"): vals}, 15)
    baseline = {T0 + i * DAY for i in range(14)}
    reports = an.detect_flow_anomalies(flows, baseline_days=baseline)
    rep = reports[("a", "b")]
    assert rep.degenerate_cells == ["all"]
    assert rep.flagged() == {14} and rep.flags[0].z is None


def test_detect_flow_anomalies_validation():
    flows = flows_from({("a", "b"): [10] * 8}, 8)
    # 8 consecutive days leave most weekdays with a single baseline sample
    with pytest.raises(ValueError, match="need at least 2"):
        an.detect_flow_anomalies(flows)
    with pytest.raises(ValueError, match="not all present"):
        an.detect_flow_anomalies(flows, baseline_days={T0 - DAY})
    with pytest.raises(ValueError, match="no flow networks"):
        an.detect_flow_anomalies([])


# -- rank curves ----------------------------------------------------------------------

def test_rank_contacts_ordering_and_ties():
    cdrs = (
        [voice("A", "B", "T1", T0 + i * 60) for i in range(3)]
        + [voice("A", "C", "T1", T0 + 1000 + i * 60) for i in range(3)]
        + [voice("A", "D", "T1", T0 + 2000)]
        + [voice("C", "A", "T1", T0 + 3000), voice("C", "A", "T1", T0 + 3100)]
        + [sms("A", "E", "T1", T0 + 4000)]  # texts alone never rank
    )
    ds = make_dataset(cdrs, window=(T0, T0 + DAY))
    ranked = an.rank_contacts(ds, "A", (T0, T0 + DAY))
    assert ranked == ["C", "B", "D"]  # C wins the 3-3 tie on two-way volume
    assert an.rank_contacts(ds, "E", (T0, T0 + DAY)) == []


def test_rank_activation_curves_quantitative():
    rank_day = [
        voice("A", "B", "T1", T0 + 100), voice("A", "B", "T1", T0 + 200),
        voice("A", "X", "T1", T0 + 300),
        voice("C", "D", "T1", T0 + 400), voice("C", "D", "T1", T0 + 500),
        voice("C", "Y", "T1", T0 + 600),
    ]
    comparison_day = [
        voice("A", "B", "T1", T0 + DAY + 10 * 3600),
        voice("C", "Y", "T1", T0 + DAY + 10 * 3600),
    ]
    event_day = [
        voice("A", "B", "T1", T0 + 2 * DAY + 10 * 3600),
        voice("C", "D", "T1", T0 + 2 * DAY + 10 * 3600),
    ]
    ds = make_dataset(rank_day + comparison_day + event_day, window=(T0, T0 + 3 * DAY))
    curves = an.rank_activation_curves(
        ds,
        event_time=T0 + 2 * DAY + 11 * 3600,
        ranks=(1, 2),
        bin_width=3600,
        comparison_days=[T0 + DAY],
        rank_window=(T0, T0 + DAY),
    )
    assert curves.event_day == T0 + 2 * DAY
    assert len(curves.offsets) == 24 and curves.offsets[10] == 36000
    assert curves.event_fraction[1][10] == pytest.approx(1.0)   # A and C both
    assert curves.comparison_mean[1][10] == pytest.approx(0.5)  # only A
    assert curves.ratio[1][10] == pytest.approx(2.0)
    assert curves.ratio[2][10] == pytest.approx(0.0)  # C ignored their #2
    assert curves.ratio[1][0] is None  # nobody calls at midnight either day


def test_rank_activation_curves_flat_traffic_gives_unit_ratio():
    cdrs = [voice("A", "B", "T1", T0 + d * DAY + 12 * 3600) for d in range(3)]
    ds = make_dataset(cdrs, window=(T0, T0 + 3 * DAY))
    curves = an.rank_activation_curves(
        ds, event_time=T0 + 2 * DAY, ranks=(1,), bin_width=3600,
        comparison_days=[T0, T0 + DAY],
    )
    assert curves.ratio[1][12] == pytest.approx(1.0)
    assert all(r is None for i, r in enumerate(curves.ratio[1]) if i != 12)


def test_rank_activation_curves_validation():
    ds = make_dataset([voice("A", "B", "T1", T0 + 100)], window=(T0, T0 + DAY))
    with pytest.raises(ValueError, match="comparison day"):
        an.rank_activation_curves(ds, event_time=T0)
    with pytest.raises(ValueError, match="empty rank window"):
        an.rank_activation_curves(ds, event_time=T0, comparison_days=[T0])


# -- distance matrix --------------------------------------------------------------------

def test_distance_activation_matrix():
    towers = {"T1": Tower("T1", 90.0, 23.0), "T2": Tower("T2", 91.0, 23.0)}
    homes = {"A": "T1", "B": "T1", "C": "T2"}
    hour = 10 * 3600
    cdrs = [
        # comparison day: one near-near tie
        voice("A", "B", "T1", T0 + hour + 60),
        # event day: the same tie (three times) plus a near-far tie
        voice("A", "B", "T1", T0 + DAY + hour + 60),
        voice("A", "B", "T1", T0 + DAY + hour + 120),
        voice("A", "B", "T1", T0 + DAY + hour + 180),
        voice("A", "C", "T1", T0 + DAY + hour + 240),
        # outside the hour window: ignored
        voice("B", "C", "T1", T0 + DAY + 20 * 3600),
    ]
    ds = make_dataset(cdrs, towers=towers, window=(T0, T0 + 2 * DAY))
    ratio, counts = an.distance_activation_matrix(
        ds, epicenter=(90.0, 23.0), event_day=T0 + DAY,
        hour_window=(hour, hour + 3600), distance_bins=[50.0],
        comparison_days=[T0], homes=homes,
    )
    assert counts.shape == (2, 2)
    assert counts[0, 0] == 1.0  # repeated calls collapse to one tie
    assert counts[0, 1] == 1.0
    assert ratio[0, 0] == pytest.approx(1.0)
    assert np.isnan(ratio[0, 1])  # no comparison ties near->far
    with pytest.raises(ValueError, match="ascending"):
        an.distance_activation_matrix(ds, (90, 23), T0, (0, 3600), [50.0, 10.0], [T0])
    with pytest.raises(ValueError, match="comparison day"):
        an.distance_activation_matrix(ds, (90, 23), T0, (0, 3600), [50.0], [])


# -- writers ------------------------------------------------------------------------

def test_writers(tmp_path):
    ts = series([10.0] * 20 + [100.0])
    report = an.detect_anomalies(ts, baseline="global_mean")
    p1 = tmp_path / "anoms.csv"
    an.write_anomalies_csv([report], str(p1), header_comment="# a")
    lines = p1.read_text().splitlines()
    assert lines[0] == "# a"
    assert lines[1].startswith("entity,bin_start")
    assert lines[2].startswith(f"global,{T0 + 20 * 3600},100.0,")

    p2 = tmp_path / "flows.csv"
    an.write_flows_csv(an.FlowNetwork(T0, {("w", "e"): 3, ("e", "w"): 2}), str(p2))
    assert p2.read_text().splitlines()[1:] == ["e,w,2", "w,e,3"]

import numpy as np
import pytest

from privutil.core import PrivacySetting, RngSeedPlan, SensorDataset
from privutil.metrics import ErrorStats, NormalizationConstants, ObjectiveWeights
from privutil.sweep import (
    EvaluationRecord,
    SubsetSchedule,
    TradeoffSample,
    assemble_tradeoffs,
    default_schedule,
    draw_subset,
    emit_cdf,
    evaluate_grid,
    evaluate_setting,
    mask_rows,
    record_from_row,
    record_to_row,
    RECORD_COLUMNS,
)

W = ObjectiveWeights()
UNIT_NORM = NormalizationConstants(1, 1, 1, 1, 1, 1)


class TestSchedule:
    def test_full_scale(self):
        s = default_schedule(6435)
        assert s.sizes == (*range(50, 501, 50), *range(1000, 6001, 500), 6435)
        assert len(s.sizes) == 22

    def test_truncation(self):
        assert default_schedule(120).sizes == (50, 100, 120)
        assert default_schedule(40).sizes == (40,)
        assert default_schedule(500).sizes[-1] == 500 and default_schedule(500).sizes.count(500) == 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            SubsetSchedule((100, 50))
        with pytest.raises(ValueError):
            SubsetSchedule((10,), 0)


class TestEvaluation:
    def test_nomask_zero(self, small_dataset):
        recs = evaluate_setting(PrivacySetting.nomask(), small_dataset, SubsetSchedule((20, 60), 2))
        assert len(recs) == 4
        for r in recs:
            assert r.local_stats == ErrorStats(0, 0, 0) and r.global_stats == ErrorStats(0, 0, 0)

    def test_tiny_scale(self, small_dataset):
        (rec,) = evaluate_setting(PrivacySetting.laplace(1e-9), small_dataset, SubsetSchedule((60,), 1))
        assert rec.global_stats.mean < 1e-6

    def test_deterministic(self, small_dataset):
        s = PrivacySetting.sine((0.03, 0.3))
        sched = SubsetSchedule((10, 30), 2)
        assert evaluate_setting(s, small_dataset, sched) == evaluate_setting(s, small_dataset, sched)

    def test_seed_changes_output(self, small_dataset):
        s = PrivacySetting.laplace(0.1)
        sched = SubsetSchedule((30,), 1)
        a = evaluate_setting(s, small_dataset, sched, plan=RngSeedPlan(1))
        b = evaluate_setting(s, small_dataset, sched, plan=RngSeedPlan(2))
        assert a[0].local_stats != b[0].local_stats

    def test_oversized_subset_skipped(self, small_dataset, caplog):
        recs = evaluate_setting(PrivacySetting.laplace(0.1), small_dataset, SubsetSchedule((10, 1000), 1))
        assert [r.subset_size for r in recs] == [10]
        assert "exceeds" in caplog.text

    def test_skip_callback(self, small_dataset):
        s = PrivacySetting.laplace(0.1)
        sched = SubsetSchedule((10,), 3)
        full = evaluate_setting(s, small_dataset, sched)
        part = evaluate_setting(s, small_dataset, sched, skip=lambda k: k[2] == 1)
        assert part == [full[0], full[2]]

    def test_threads_identical(self, small_dataset):
        grid = [PrivacySetting.laplace(b) for b in (0.01, 0.1, 1.0)] + [PrivacySetting.nomask()]
        sched = SubsetSchedule((20, 60), 2)
        seen = []
        a = evaluate_grid(grid, small_dataset, sched, threads=1)
        b = evaluate_grid(grid, small_dataset, sched, threads=4, sink=seen.extend)
        assert a == b == seen

    def test_subset_sorted_and_unique(self):
        rows = draw_subset(100, 30, 12345)
        assert len(set(rows.tolist())) == 30 and np.all(np.diff(rows) > 0)
        assert draw_subset(10, 50, 1).tolist() == list(range(10))

    def test_user_noise_independent_of_subset(self, small_dataset):
        s = PrivacySetting.laplace(0.5)
        plan = RngSeedPlan(3)
        a = mask_rows(small_dataset, [1, 5, 9], [s] * 3, 0, 0, plan)
        b = mask_rows(small_dataset, [5], [s], 0, 0, plan)
        np.testing.assert_array_equal(a[1], b[0])

    def test_exclusions_count_zero_readings(self):
        values = np.array([[0.0, 1.0, 0.0, 2.0]])
        ds = SensorDataset(values, slots_per_period=2)
        (rec,) = evaluate_setting(PrivacySetting.laplace(0.1), ds, SubsetSchedule((1,), 1))
        assert rec.exclusion_count == 2


class TestRecords:
    def test_row_round_trip(self, small_dataset):
        for s in (PrivacySetting.laplace(0.123), PrivacySetting.sine((0, 0.18)), PrivacySetting.nomask()):
            for rec in evaluate_setting(s, small_dataset, SubsetSchedule((10,), 2)):
                row = dict(zip(RECORD_COLUMNS, record_to_row(rec)))
                assert record_from_row(row) == rec


def _rec(sid, loc, glo):
    return EvaluationRecord(sid, PrivacySetting.laplace(1).mechanism, (1.0,), 10, 0, 0,
                            ErrorStats(*loc), ErrorStats(*glo), 0, 0)


class TestTradeoffs:
    def test_nomask(self, small_dataset):
        recs = evaluate_setting(PrivacySetting.nomask(), small_dataset, SubsetSchedule((10,), 3))
        t = assemble_tradeoffs(recs, W, UNIT_NORM)["none"]
        assert t.privacy_values == (0, 0, 0) and t.utility_values == (1, 1, 1)

    def test_endpoints(self):
        t = assemble_tradeoffs([_rec("a", (1, 1, 1), (1, 1, 1))], W, UNIT_NORM)["a"]
        assert t.privacy_values == pytest.approx((1,)) and t.utility_values == pytest.approx((0,))

    def test_function_of_stats_only(self):
        t = assemble_tradeoffs([_rec("a", (0.2, 0.1, 0.3), (0.1, 0.1, 0.1)),
                                _rec("b", (0.2, 0.1, 0.3), (0.1, 0.1, 0.1))], W, UNIT_NORM)
        assert t["a"].privacy_values == t["b"].privacy_values
        assert t["a"].utility_values == t["b"].utility_values

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            TradeoffSample("a", (0.1,), ())


class TestCdf:
    def test_examples(self):
        pts = dict(emit_cdf([1, 2, 3, 4], points=4))
        assert pts[4.0] == 1.0
        assert dict(emit_cdf([1, 2, 3, 4], points=7))[2.5] == 0.5

    def test_degenerate(self):
        assert emit_cdf([5.0], 3) == [(5.0, 1.0)] * 3

    def test_monotone(self):
        pts = emit_cdf(np.random.default_rng(0).random(500), 50)
        f = [p[1] for p in pts]
        assert f == sorted(f) and f[-1] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            emit_cdf([])

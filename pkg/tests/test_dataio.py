import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privutil.core import PrivacySetting, RngSeedPlan
from privutil.dataio import (
    SCHEMAS,
    DataFormatError,
    SchemaError,
    SyntheticSpec,
    cell_count,
    default_daily_profile,
    generate_synthetic,
    load_csv,
    load_results,
    read_manifest,
    save_csv,
    save_results,
    write_manifest,
)
from privutil.metrics import local_errors
from privutil.sweep import RECORD_COLUMNS, SubsetSchedule, evaluate_setting, record_from_row, record_to_row


class TestSynthetic:
    def test_shape_and_non_negative(self):
        ds = generate_synthetic(SyntheticSpec(n_users=20, n_days=3), seed=1)
        assert ds.values.shape == (20, 144)
        assert np.all(ds.values >= 0)
        assert ds.user_ids[0] == "u00" and ds.user_ids[-1] == "u19"

    def test_missing_rate(self):
        ds = generate_synthetic(SyntheticSpec(n_users=200, n_days=10), seed=2)
        assert ds.missing.mean() == pytest.approx(0.1, abs=0.01)

    def test_no_exclusions_without_zeros_or_missing(self):
        ds = generate_synthetic(SyntheticSpec(n_users=30, n_days=2, missing_rate=0, zero_rate=0), seed=3)
        assert local_errors(ds.values, ds.values + 1, ds.missing).excluded == 0

    def test_flat_users(self):
        ds = generate_synthetic(SyntheticSpec(n_users=5, n_days=2, noise_cv=0, user_scale_spread=0,
                                              missing_rate=0, zero_rate=0), seed=4)
        assert np.all(ds.values == ds.values[0])
        np.testing.assert_allclose(ds.values[0, :48], 0.25 * default_daily_profile())

    def test_deterministic(self):
        spec = SyntheticSpec(n_users=10, n_days=2)
        a, b = generate_synthetic(spec, 9), generate_synthetic(spec, 9)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, generate_synthetic(spec, 10).values)

    def test_missing_rate_independent(self):
        a = generate_synthetic(SyntheticSpec(n_users=10, n_days=2, missing_rate=0.0), 5)
        b = generate_synthetic(SyntheticSpec(n_users=10, n_days=2, missing_rate=0.3), 5)
        keep = ~b.missing
        np.testing.assert_array_equal(a.values[keep], b.values[keep])

    def test_full_shape_cell_count(self):
        assert cell_count(SyntheticSpec(n_users=6435, n_days=536)) == 165_559_680

    def test_profile_mean_one(self):
        assert default_daily_profile(48).mean() == pytest.approx(1.0)

    @pytest.mark.parametrize("kw", [dict(n_users=0), dict(missing_rate=1.0), dict(base_load=0),
                                    dict(daily_profile=(1.0,) * 3)])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            SyntheticSpec(**kw)


class TestCsv:
    def test_round_trip(self, tmp_path, small_dataset):
        save_csv(tmp_path / "d.csv", small_dataset)
        back = load_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.values, small_dataset.values)
        np.testing.assert_array_equal(back.missing, small_dataset.missing)
        assert back.user_ids == small_dataset.user_ids

    def test_small(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("user_id,slot_index,value\nu1,0,1.5\nu1,1,2\n")
        ds = load_csv(p)
        assert ds.values.shape == (1, 2) and ds.values.tolist() == [[1.5, 2.0]]

    def test_empty_value_missing(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("user_id,slot_index,value\nu1,0,1\nu1,1,1\nu1,2,1\nu1,3,\n")
        assert load_csv(p).missing[0, 3]

    @pytest.mark.parametrize("row,msg", [("u1,0,-5", "negative"), ("u1,0,abc", "non-numeric"),
                                         ("u1,x,1", "slot_index"), ("u1,0", "fields")])
    def test_bad_rows_name_line(self, tmp_path, row, msg):
        p = tmp_path / "d.csv"
        p.write_text(f"user_id,slot_index,value\n{row}\n")
        with pytest.raises(DataFormatError, match=f":2: .*{msg}"):
            load_csv(p)

    def test_duplicate(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("user_id,slot_index,value\nu1,0,1\nu1,0,2\n")
        with pytest.raises(DataFormatError, match=":3: duplicate"):
            load_csv(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("user,slot,value\n")
        with pytest.raises(DataFormatError):
            load_csv(p)


class TestResults:
    def test_empty_round_trip(self, tmp_path):
        for kind in SCHEMAS:
            save_results(tmp_path / f"{kind}.csv", kind, [])
            assert (tmp_path / f"{kind}.csv").read_text() == ",".join(SCHEMAS[kind]) + "\n"
            assert load_results(tmp_path / f"{kind}.csv", kind) == []

    def test_records_round_trip(self, tmp_path, small_dataset):
        recs = evaluate_setting(PrivacySetting.sine((0.03, 0.6)), small_dataset, SubsetSchedule((10, 20), 2),
                                plan=RngSeedPlan(3))
        save_results(tmp_path / "r.csv", "records", [dict(zip(RECORD_COLUMNS, record_to_row(r))) for r in recs])
        back = [record_from_row({k: str(v) for k, v in row.items()}) for row in load_results(tmp_path / "r.csv", "records")]
        assert back == recs

    @settings(max_examples=50)
    @given(st.floats(allow_nan=False, allow_infinity=False), st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)))
    def test_reals_lossless(self, tmp_path_factory, x, opt):
        path = tmp_path_factory.mktemp("rt") / "t.csv"
        row = {"mechanism": "laplace", "privacy": x, "count": 3, "min_utility": x,
               "median_utility": x, "max_utility": x}
        save_results(path, "trajectory", [row])
        assert load_results(path, "trajectory") == [row]
        bins = {"bin_index": 0, "lo": 0.0, "hi": 0.2, "setting_id": None if opt is None else "a",
                "mechanism": None, "params": "", "objective": opt, "median_privacy": opt, "median_utility": opt}
        save_results(path, "bins", [bins])
        assert load_results(path, "bins") == [bins]

    def test_unknown_column(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("mechanism,x,F,extra\n")
        with pytest.raises(SchemaError, match="extra"):
            load_results(p, "cdf")

    def test_missing_column(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("mechanism,x\n")
        with pytest.raises(SchemaError, match="'F'"):
            load_results(p, "cdf")

    def test_manifest(self, tmp_path):
        write_manifest(tmp_path / "m", {"seed": 3, "b": 0.1, "name": "x", "opt": None})
        assert read_manifest(tmp_path / "m") == {"seed": "3", "b": "0.10000000000000001", "name": "x", "opt": ""}

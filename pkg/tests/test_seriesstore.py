from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from tailedts.seriesstore import (
    MonthTable,
    PageKey,
    TimeSeries,
    categorize,
    slice_days,
    total_views,
)

UTC = timezone.utc
START = datetime(2024, 1, 1, tzinfo=UTC)


def series(values, title="page", domain="en", start=START):
    return TimeSeries(key=PageKey(domain, title), start=start,
                      values=np.asarray(values))


def month_of(values_by_title, days):
    members = [series([int(v) for v in vals] * 1, title=t)
               for t, vals in values_by_title.items()]
    return MonthTable.build((2024, 1), members, start=START, t=days * 24)


class TestPageKey:
    def test_empty_fields_normalize_to_na(self):
        key = PageKey("", "")
        assert key == PageKey("NA", "NA")

    def test_ordering_is_tuple_order(self):
        assert PageKey("de", "Z") < PageKey("en", "A") < PageKey("en", "B")


class TestTimeSeries:
    def test_rejects_negative_and_fractional(self):
        with pytest.raises(ValueError):
            series([1, -1, 2] + [0] * 21)
        with pytest.raises(ValueError):
            series([1.5] * 24)

    def test_rejects_non_utc_or_mid_hour_start(self):
        with pytest.raises(ValueError):
            TimeSeries(PageKey("en", "x"), datetime(2024, 1, 1), np.ones(24, dtype=int))
        with pytest.raises(ValueError):
            TimeSeries(PageKey("en", "x"),
                       datetime(2024, 1, 1, 0, 30, tzinfo=UTC), np.ones(24, dtype=int))

    def test_values_immutable(self):
        s = series([1] * 24)
        with pytest.raises(ValueError):
            s.values[0] = 5

    def test_total_views(self):
        assert total_views(series([0] * 24)) == 0
        assert total_views(series([1, 2, 3] + [0] * 21)) == 6
        assert total_views(series([1] * 744)) == 744


class TestCategorize:
    def test_decade_buckets(self):
        table = month_of({
            "mid": [500] + [0] * 23,      # 500 -> O(10^2)
            "low": [99] + [0] * 23,       # 99 -> no bucket
            "edge": [10000] + [0] * 23,   # exactly 1e4 -> O(10^4), half-open
            "big": [100000] + [0] * 23,   # 1e5 -> outside all buckets
        }, days=1)
        part = categorize(table)
        by_title = {table.series[i].key.page_title: label
                    for label, idxs in part.buckets.items() for i in idxs}
        assert by_title == {"mid": "O(10^2)", "edge": "O(10^4)"}

    def test_reordering_only_relabels_indices(self, rng):
        vals = [[150] + [0] * 23, [5000] + [0] * 23, [20000] + [0] * 23,
                [700] + [0] * 23]
        names = [f"p{i}" for i in range(4)]
        table = month_of(dict(zip(names, vals)), days=1)
        part = categorize(table)
        perm = rng.permutation(4)
        shuffled = MonthTable.build((2024, 1), [table.series[i] for i in perm])
        part2 = categorize(shuffled)
        for label in part.buckets:
            titles1 = {table.series[i].key.page_title for i in part.buckets[label]}
            titles2 = {shuffled.series[i].key.page_title for i in part2.buckets[label]}
            assert titles1 == titles2

    def test_empty_table_rejected(self):
        empty = MonthTable.build((2024, 1), [], start=START, t=24)
        with pytest.raises(ValueError):
            categorize(empty)


class TestSliceDays:
    def fixture_table(self, days=31):
        values = np.arange(days * 24) % 97
        return MonthTable.build((2024, 1), [series(values)], start=START, t=days * 24)

    def test_full_range_is_identity(self):
        table = self.fixture_table()
        out = slice_days(table, 1, 31)
        assert out.t == table.t and out.start == table.start
        assert np.array_equal(out.series[0].values, table.series[0].values)

    def test_week_slice_has_168_hours(self):
        out = slice_days(self.fixture_table(), 18, 24)
        assert out.t == 168
        assert out.start == START + timedelta(days=17)

    def test_middle_day_matches_manual_indexing(self):
        table = self.fixture_table(days=3)
        out = slice_days(table, 2, 2)
        expected = table.series[0].values[24:48]
        assert np.array_equal(out.series[0].values, expected)

    def test_composition(self):
        table = self.fixture_table()
        inner = slice_days(slice_days(table, 5, 20), 3, 7)
        direct = slice_days(table, 7, 11)  # 5+3-1 .. 5+7-1
        assert inner.start == direct.start
        assert np.array_equal(inner.series[0].values, direct.series[0].values)

    def test_out_of_range_rejected(self):
        table = self.fixture_table(days=3)
        with pytest.raises(ValueError):
            slice_days(table, 0, 2)
        with pytest.raises(ValueError):
            slice_days(table, 2, 4)

    def test_zero_fraction_recomputes(self):
        table = month_of({"a": [0, 5] * 12, "b": [1] * 24}, days=1)
        assert table.zero_fraction == pytest.approx(12 / 48)
        assert table.recompute_zero_fraction() == pytest.approx(table.zero_fraction)

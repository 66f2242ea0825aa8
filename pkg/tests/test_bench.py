import csv
import io

import pytest

from flsim.bench import bench_aggregators, bench_csv, bench_layout, time_ratio
from flsim.errors import ConfigError


def test_rows_and_log_size():
    rows = bench_aggregators([4, 6], d=40, m=3, repetitions=2, kinds=("legato", "mean", "krum"))
    legato = [r for r in rows if r.aggregator == "legato"]
    assert [r.n for r in legato] == [4, 6]
    assert [r.peak_log_values for r in legato] == [4 * 3 * 40, 6 * 3 * 40]
    assert all(r.peak_log_values == 0 for r in rows if r.aggregator != "legato")
    assert all(r.median_time_ns > 0 for r in rows)


def test_csv_format():
    rows = bench_aggregators([4], d=10, m=2, repetitions=1, kinds=("legato",))
    text = bench_csv(rows)
    assert "\r" not in text
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert parsed[0]["aggregator"] == "legato"
    assert int(parsed[0]["peak_log_values"]) == 4 * 2 * 10


def test_layout_covers_dimension():
    assert bench_layout(1000).dim == 1000
    with pytest.raises(ConfigError):
        bench_layout(1)


@pytest.mark.parametrize("n_values", [[], [8, 4]])
def test_bad_n_values(n_values):
    with pytest.raises(ConfigError):
        bench_aggregators(n_values, d=10, m=2, repetitions=1)


def test_time_ratio():
    rows = bench_aggregators([4, 8], d=10, m=2, repetitions=1, kinds=("mean",))
    assert time_ratio(rows, "mean", 4, 8) > 0

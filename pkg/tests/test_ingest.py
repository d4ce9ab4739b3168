from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlmn.errors import ConfigError, FetchError, IntegrityError, ParseError
from tlmn.features import METEO_FIELDS
from tlmn.ingest import (
    PowerColumnMap,
    SyntheticConfig,
    cache_key,
    fetch_power,
    fetch_power_years,
    merge_series,
    parse_power_csv,
    power_request,
    read_meteo_csv,
    synth_generate,
    write_meteo_csv,
)
from tlmn.solar_geometry import OMDURMAN, ClearSkyParams, hourly_clear_sky

POWER_COLS = ["YEAR", "MO", "DY", "HR", "ALLSKY_SFC_SW_DWN", "ALLSKY_SFC_SW_DNI", "ALLSKY_SFC_SW_DIFF", "T2M", "RH2M",
              "WS2M", "PS"]  # fmt: skip


def power_text(hours=48, start=date(2022, 3, 1), missing=(), order=None, extra_header=()):
    lines = ["-BEGIN HEADER-", "NASA/POWER Source Native Resolution Hourly Data", "-999 = missing", "-END HEADER-"]
    lines.append(",".join(POWER_COLS + list(extra_header)))
    rows = []
    for i in range(hours):
        day, hr = divmod(i, 24)
        d = date.fromordinal(start.toordinal() + day)
        ghi = max(0.0, 800 * np.sin((hr - 4) / 14 * np.pi)) if 4 <= hr <= 18 else 0.0
        vals = [ghi, ghi * 1.1, ghi * 0.2, 25 + i * 0.1, 20.0, 3.0, 96.5]
        if i in missing:
            vals[3] = -999
        rows.append(",".join(str(v) for v in [d.year, d.month, d.day, hr] + [round(v, 2) for v in vals]))
    if order is not None:
        rows = [rows[j] for j in order]
    return "\n".join(lines + rows) + "\n"


class TestParse:
    def test_basic(self, tmp_path):
        p = tmp_path / "power.csv"
        p.write_text(power_text())
        series, gaps = parse_power_csv(p)
        assert len(series) == 48 and not gaps
        assert series.timestamps[0] == np.datetime64("2022-03-01T00:00:00")
        assert series.t2m[1] == pytest.approx(25.1)
        assert series.ghi[0] == 0.0 and series.ps[0] == 96.5

    def test_sentinel_row_becomes_gap(self, tmp_path):
        p = tmp_path / "power.csv"
        p.write_text(power_text(missing=(10,)))
        series, gaps = parse_power_csv(p)
        assert len(series) == 47
        assert gaps.missing_hours == 1
        assert gaps.runs[0].start == np.datetime64("2022-03-01T10:00:00") == gaps.runs[0].end
        assert len(series.gaps()) == 1

    def test_edge_sentinels_reported(self, tmp_path):
        p = tmp_path / "power.csv"
        p.write_text(power_text(missing=(0, 1, 47)))
        series, gaps = parse_power_csv(p)
        assert len(series) == 45 and [r.hours for r in gaps.runs] == [2, 1]

    def test_shuffled_rows_sorted(self, tmp_path):
        p = tmp_path / "power.csv"
        p.write_text(power_text(order=np.random.default_rng(0).permutation(48)))
        series, _ = parse_power_csv(p)
        assert np.all(np.diff(series.timestamps) == np.timedelta64(3600, "s"))
        assert series.t2m[5] == pytest.approx(25.5)

    def test_unknown_column(self, tmp_path):
        p = tmp_path / "power.csv"
        p.write_text(power_text(extra_header=("QV2M",)))
        with pytest.raises(ParseError, match=r"line 5: unknown columns \['QV2M'\]"):
            parse_power_csv(p)

    def test_bad_value_line_number(self, tmp_path):
        p = tmp_path / "power.csv"
        lines = power_text().splitlines()
        lines[8] = lines[8].replace("96.5", "abc")
        p.write_text("\n".join(lines))
        with pytest.raises(ParseError, match="line 9"):
            parse_power_csv(p)

    def test_duplicate(self, tmp_path):
        p = tmp_path / "power.csv"
        lines = power_text().splitlines()
        p.write_text("\n".join(lines + [lines[-1]]))
        with pytest.raises(ParseError, match="duplicate"):
            parse_power_csv(p)

    def test_unit_conversion(self, tmp_path):
        p = tmp_path / "power.csv"
        p.write_text(power_text())
        wh, _ = parse_power_csv(p)
        kwh, _ = parse_power_csv(p, PowerColumnMap(irradiance_unit="kWh/m2"))
        np.testing.assert_allclose(kwh.ghi, wh.ghi * 1000)
        assert np.array_equal(kwh.t2m, wh.t2m)

    def test_column_map_validation(self):
        with pytest.raises(ConfigError):
            PowerColumnMap(columns=(("A", "ghi"),))
        with pytest.raises(ConfigError):
            PowerColumnMap(irradiance_unit="lux")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            parse_power_csv(tmp_path / "none.csv")


def test_native_round_trip(tmp_path, synth_two_years):
    series = synth_two_years.series[:500]
    back = read_meteo_csv(write_meteo_csv(series, tmp_path / "s.csv"))
    assert np.array_equal(back.timestamps, series.timestamps)
    for f in METEO_FIELDS:
        assert np.array_equal(getattr(back, f), getattr(series, f))


def test_merge_series(synth_two_years):
    s = synth_two_years.series
    merged = merge_series([s[100:300], s[0:150]])
    assert np.array_equal(merged.timestamps, s.timestamps[:300])
    assert np.array_equal(merged.ghi, s.ghi[:300])


class FakeTransport:
    def __init__(self, status=200, body=None):
        self.status = status
        self.body = body
        self.calls = []

    def __call__(self, url, params):
        self.calls.append(params)
        start = date.fromisoformat(f"{params['start'][:4]}-{params['start'][4:6]}-{params['start'][6:]}")
        end = date.fromisoformat(f"{params['end'][:4]}-{params['end'][4:6]}-{params['end'][6:]}")
        body = self.body
        if body is None:
            body = power_text(hours=((end - start).days + 1) * 24, start=start).encode()
        return self.status, body


class TestFetch:
    def test_cache_serves_second_request(self, tmp_path):
        t = FakeTransport()
        a = fetch_power(OMDURMAN, date(2022, 3, 1), date(2022, 3, 2), tmp_path, transport=t)
        b = fetch_power(OMDURMAN, date(2022, 3, 1), date(2022, 3, 2), tmp_path, transport=t)
        assert a == b and len(t.calls) == 1
        series, _ = parse_power_csv(a)
        assert len(series) == 48

    def test_request_parameters(self):
        params = power_request(OMDURMAN, date(2021, 1, 1), date(2021, 12, 31))
        assert params["time-standard"] == "UTC" and params["start"] == "20210101" and params["end"] == "20211231"
        assert params["parameters"].split(",") == POWER_COLS[4:]
        assert cache_key(params) == cache_key(dict(reversed(params.items())))

    def test_http_error(self, tmp_path):
        with pytest.raises(FetchError, match="404") as info:
            fetch_power(OMDURMAN, date(2022, 3, 1), date(2022, 3, 1), tmp_path, transport=FakeTransport(404, b""))
        assert info.value.status == 404
        assert not list(tmp_path.iterdir())

    def test_partial_payload(self, tmp_path):
        body = power_text(hours=30).encode()
        with pytest.raises(IntegrityError, match="30 of 48"):
            fetch_power(OMDURMAN, date(2022, 3, 1), date(2022, 3, 2), tmp_path, transport=FakeTransport(body=body))
        assert not list(tmp_path.iterdir())

    def test_garbage_payload(self, tmp_path):
        with pytest.raises(IntegrityError):
            fetch_power(OMDURMAN, date(2022, 3, 1), date(2022, 3, 1), tmp_path, transport=FakeTransport(body=b"<html>"))

    def test_years(self, tmp_path):
        t = FakeTransport()
        paths = fetch_power_years(OMDURMAN, 2020, 2021, tmp_path, transport=t)
        assert len(paths) == 2 and [c["start"] for c in t.calls] == ["20200101", "20210101"]

    def test_bad_range(self, tmp_path):
        with pytest.raises(ConfigError):
            fetch_power(OMDURMAN, date(2022, 3, 2), date(2022, 3, 1), tmp_path, transport=FakeTransport())


class TestSynthetic:
    def test_shape_and_years(self, synth_two_years):
        s = synth_two_years.series
        assert len(s) == 24 * 365 * 2
        assert s.timestamps[0] == np.datetime64("2021-01-01T00:00:00")
        assert not s.gaps()

    def test_bounded_by_clear_sky(self, synth_two_years):
        s = synth_two_years.series
        clear = np.asarray(hourly_clear_sky(OMDURMAN, s.timestamps, ClearSkyParams(3.5)))
        assert np.all(s.ghi >= 0) and np.all(s.ghi <= 1.1 * clear + 1e-9)
        assert np.all(s.ghi[clear == 0] == 0)
        assert np.all(s.dni >= 0) and np.all(s.dhi >= 0)
        assert np.all((s.rh >= 1) & (s.rh <= 100)) and np.all(s.ws >= 0)

    def test_steps(self, synth_two_years):
        d = synth_two_years
        assert d.step_starts.size == 10
        local_hours = ((d.step_starts + np.timedelta64(2, "h")).astype("datetime64[h]").astype(int)) % 24
        assert np.all((local_hours >= 9) & (local_hours < 15))
        idx = np.searchsorted(d.series.timestamps, d.step_starts)
        assert np.all(d.tau[idx] == 0.30)

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_deterministic(self, seed):
        cfg = SyntheticConfig(seed=seed, n_years=1, step_transients_per_year=2)
        a, b = synth_generate(cfg), synth_generate(cfg)
        assert np.array_equal(a.series.ghi, b.series.ghi) and np.array_equal(a.series.t2m, b.series.t2m)
        assert np.all((a.tau >= 0.05) & (a.tau <= 1.1))

    def test_seed_matters(self):
        a = synth_generate(SyntheticConfig(seed=1, n_years=1))
        b = synth_generate(SyntheticConfig(seed=2, n_years=1))
        assert not np.array_equal(a.series.ghi, b.series.ghi)

    def test_regimes_occur(self, synth_two_years):
        counts = np.bincount(synth_two_years.regime, minlength=3)
        assert np.all(counts > 0)

    @pytest.mark.parametrize(
        "kw", [dict(transition=((1, 0, 0), (0, 1, 0), (0.5, 0.4, 0.0))), dict(regime_mean=(2.0, 0.5, 0.3)),
               dict(ar_coeff=1.0), dict(n_years=0), dict(initial_regime=3)],
    )  # fmt: skip
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SyntheticConfig(**kw)

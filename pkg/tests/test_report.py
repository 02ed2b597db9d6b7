import csv

import pytest

from storagebid.report import ProfitReport, profit_ratio


def test_ratio_examples():
    assert profit_ratio(83.63, 100.0) == pytest.approx(83.63)
    assert profit_ratio(57.2, 57.2) == 100.0
    assert profit_ratio(0.0, 12.0) == 0.0
    assert profit_ratio(5.0, 0.0) is None
    assert profit_ratio(5.0, -3.0) is None


def _report():
    r = ProfitReport("demo")
    r.add("NYC", 4, "PR-10", 83.63, 100.0, {"2019-01": 83.63}, {"2019-01": 100.0})
    r.add("NYC", 2, "PR-10", 50.0, 80.0)
    r.add("NYC", 2, "HA-1", 40.0, 80.0)
    r.add("WEST", 2, "PR-10", 1.0, 0.0)
    r.add("QLD", 2, "HA-1", 7.0, 10.0, variant="transfer-3d")
    return r


def test_json_round_trip_is_stable():
    r = _report()
    back = ProfitReport.from_json(r.to_json())
    assert back.to_json() == r.to_json()
    assert back.get("NYC", 4, "PR-10").ratio == pytest.approx(83.63)
    with pytest.raises(KeyError):
        back.get("NYC", 12, "PR-10")


def test_table_layout():
    lines = _report().table().splitlines()
    assert lines[0].split() == ["Zone", "PR-10", "HA-1"]
    assert lines[1].split() == ["2hr", "4hr", "2hr", "4hr"]
    lw = len(lines[1]) - 4 * 9  # label column: four 9-wide cells follow it
    assert lw == len("QLD transfer-3d") + 2
    rows = {line[:lw].strip(): line[lw:].split() for line in lines[2:]}
    assert rows["NYC"] == ["62.50", "83.63", "50.00", "-"]
    assert rows["WEST"] == ["n/a", "-", "-", "-"]
    assert rows["QLD transfer-3d"] == ["-", "-", "70.00", "-"]


def test_guard_flags_excess(caplog):
    r = ProfitReport("g")
    with caplog.at_level("WARNING"):
        r.add("A", 2, "PR-10", 101.0, 100.0)
    r.add("A", 4, "PR-10", 100.4, 100.0)
    assert [e.duration_hours for e in r.over_guard] == [2.0]
    assert "exceeds" in caplog.text


def test_csv_outputs(tmp_path):
    r = _report()
    r.write_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 5
    assert {row["ratio"] for row in rows if row["zone"] == "WEST"} == {""}
    r.write_monthly_csv(tmp_path / "m.csv")
    monthly = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(monthly) == 1 and float(monthly[0]["pf_accumulated"]) == 100.0

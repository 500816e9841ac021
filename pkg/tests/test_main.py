import csv
import json

import pytest

import main
import network_simulator
from errors import InvariantViolation


def test_presets_listed(capsys):
    assert main.main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "fire-oven" in out
    assert "intrusion-case-vi" in out
    assert "range-iv" in out


def test_run_writes_log_and_summary(tmp_path, capsys):
    out = tmp_path / "ii.jsonl"
    assert main.main(["-q", "run", "--preset", "intrusion-case-ii", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert all(set(json.loads(line)) == {"time_ms", "node", "event", "details"} for line in lines)
    summary = json.loads((tmp_path / "ii.summary.json").read_text())
    assert summary["sessions"] == []
    assert summary["false_positives"] == []
    assert "accepted: none" in capsys.readouterr().out


def test_run_pdf_report(tmp_path):
    pdf = tmp_path / "report.pdf"
    assert main.main(["-q", "run", "--preset", "water-dishwasher", "--pdf", str(pdf)]) == 0
    assert pdf.read_bytes().startswith(b"%PDF")


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--preset", "volcano"],
    ["run", "--preset", "water-dishwasher", "--override", "protocol.sleep_interval_ms=45000"],
    ["run", "--config", "/nonexistent/config.toml"],
    ["run", "--preset", "water-dishwasher", "--override", "topology.nodes.1.id=70000"],
    ["run", "--preset", "water-dishwasher", "--override", "name.x=1"],
    ["run", "--preset", "range-iv"],
    ["replicate", "--preset", "range-iv", "--seeds", "0"],
])
def test_configuration_errors_exit_1(argv):
    assert main.main(["-q", *argv]) == 1


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        main.main(["teleport"])
    assert exc.value.code == 1


def test_invariant_violation_exits_2(monkeypatch):
    def broken(*args, **kwargs):
        raise InvariantViolation("nodes disagree")

    monkeypatch.setattr(network_simulator, "run", broken)
    assert main.main(["-q", "run", "--preset", "intrusion-case-i"]) == 2


def test_range_table(tmp_path, capsys):
    assert main.main(["range", "range-v", "--loops", "2", "--messages", "10",
                      "--csv-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[1].startswith("Loopcount,RecvMsg_1->5")
    assert len(list(tmp_path.glob("all_nodes_node*.csv"))) == 4


def test_power_table(tmp_path, capsys):
    path = tmp_path / "power.csv"
    assert main.main(["power", "--capacity", "107.98", "--csv", str(path)]) == 0
    out = capsys.readouterr().out
    assert "T=0s measured=719.75" in out
    assert "deviation" in out
    assert "variant accelerometer-only: 18.00 mW  107.98Wh=5999 h" in out
    with path.open() as f:
        rows = list(csv.DictReader(f))
    fitted = [float(r["fitted_mW"]) for r in rows]
    assert fitted == sorted(fitted, reverse=True)
    assert float(rows[-1]["lifetime_h@107.98Wh"]) == pytest.approx(330.0, rel=0.01)


def test_replicate_writes_aggregates(tmp_path):
    out = tmp_path / "rep.json"
    assert main.main(["-q", "replicate", "--preset", "range-iv", "--seeds", "3",
                      "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["seeds"] == [0, 1, 2]
    assert data["aggregate"]["delivery_rate"]["n"] == 3


def test_replicate_reports_message_totals(tmp_path, capsys):
    out = tmp_path / "rep.json"
    assert main.main(["-q", "replicate", "--preset", "intrusion-case-iii", "--seeds", "2",
                      "--out", str(out)]) == 0
    assert "messages over 2 runs: sent=" in capsys.readouterr().out
    assert json.loads(out.read_text())["messages_total"]["runs"] == 2

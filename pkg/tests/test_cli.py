import csv
import json
import os
import subprocess
import sys

import pytest

from hbmem import cli
from hbmem.cli import ExperimentSpec, main


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config-hash: ")
    rows = list(csv.reader(lines[1:]))
    return lines[0], rows[0], rows[1:]


class TestSubcommands:
    def test_trees(self, tmp_path, capsys):
        out = tmp_path / "trees.csv"
        assert main(["trees", "--max-m", "5", "--out", str(out)]) == 0
        _, header, rows = read_csv(out)
        assert header == ["m", "index", "tree", "sigma", "markings"]
        assert len(rows) == 1 + 1 + 2 + 4 + 9
        assert "PASS trees: count m=5: 9" in capsys.readouterr().out

    def test_poly_narayana(self, tmp_path):
        out = tmp_path / "poly.csv"
        assert main(["poly", "--family", "narayana", "--max-m", "4", "--out", str(out)]) == 0
        _, _, rows = read_csv(out)
        assert [r[1] for r in rows] == ["1", "1+b", "1+3b+b^2", "1+6b+6b^2+b^3"]

    def test_poly_generating(self, tmp_path):
        out = tmp_path / "g.csv"
        assert main(["poly", "--family", "sigma", "--max-m", "5", "--out", str(out)]) == 0

    def test_bseries(self, tmp_path):
        assert main(["bseries", "--max-m", "4", "--out", str(tmp_path / "b.csv")]) == 0

    def test_minibatch(self, tmp_path):
        assert main(["minibatch", "--out", str(tmp_path / "mb.csv")]) == 0

    def test_coeffs(self, tmp_path):
        assert main(["coeffs", "--max-m", "3", "--n", "6", "--out", str(tmp_path / "c.csv")]) == 0

    def test_converge(self, tmp_path):
        out = tmp_path / "conv.csv"
        code = main(["converge", "--orders", "2", "--h-grid", "0.02,0.01,0.005", "--out", str(out)])
        assert code == 0
        _, header, rows = read_csv(out)
        assert header == ["engine", "order", "h", "error", "slope"] and len(rows) == 3

    def test_flow(self, tmp_path):
        out = tmp_path / "flow.csv"
        assert main(["flow", "--steps", "50", "--out", str(out)]) == 0
        _, _, rows = read_csv(out)
        assert len(rows) == 51
        assert abs(float(rows[1][2]) - 0.9148331477354789) < 1e-12


class TestReproducibility:
    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["coeffs", "--max-m", "3", "--out", str(a)])
        main(["coeffs", "--max-m", "3", "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_hash_depends_on_flags_only(self, tmp_path):
        a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
        main(["trees", "--max-m", "3", "--out", str(a)])
        main(["trees", "--max-m", "3", "--out", str(b)])
        main(["trees", "--max-m", "4", "--out", str(c)])
        first = [p.read_text().splitlines()[0] for p in (a, b, c)]
        assert first[0] == first[1] != first[2]

    def test_thread_count_does_not_change_output(self, tmp_path, monkeypatch):
        args = ["converge", "--orders", "2,3", "--h-grid", "0.02,0.01,0.005"]
        serial, parallel = tmp_path / "s.csv", tmp_path / "p.csv"
        monkeypatch.setenv("HB_MAX_THREADS", "1")
        main(args + ["--out", str(serial)])
        monkeypatch.setenv("HB_MAX_THREADS", "4")
        main(args + ["--out", str(parallel)])
        assert serial.read_bytes() == parallel.read_bytes()

    def test_spec_round_trip(self):
        spec = ExperimentSpec("flow", {"h": 0.02, "steps": 10}, {"name": "quartic_benchmark"}, "x.csv", 3)
        again = ExperimentSpec.from_json(spec.to_json())
        assert again == spec and again.config_hash() == spec.config_hash()
        moved = ExperimentSpec("flow", {"h": 0.02, "steps": 10}, {"name": "quartic_benchmark"}, "y.csv", 3)
        assert moved.config_hash() == spec.config_hash()


class TestExitCodes:
    def test_usage(self):
        with pytest.raises(SystemExit) as info:
            main(["bogus"])
        assert info.value.code == 2
        with pytest.raises(SystemExit) as info:
            main(["trees", "--no-such-flag"])
        assert info.value.code == 2

    def test_bad_config(self, tmp_path):
        bad = tmp_path / "loss.json"
        bad.write_text("{not json")
        assert main(["coeffs", "--loss", str(bad), "--out", str(tmp_path / "c.csv")]) == 3
        bad.write_text(json.dumps({"name": "no_such_loss"}))
        assert main(["coeffs", "--loss", str(bad), "--out", str(tmp_path / "c.csv")]) == 3
        assert main(["trees", "--max-m", "40", "--out", str(tmp_path / "t.csv")]) == 3

    def test_unwritable(self, tmp_path):
        assert main(["trees", "--out", str(tmp_path / "missing" / "t.csv")]) == 4

    def test_failed_check(self, tmp_path, monkeypatch):
        def failing(spec):
            return cli.Outcome(["x"], [[1]], [cli.Check("always fails", False, 0.5, 0.1)])

        monkeypatch.setitem(cli.RUNNERS, "trees", failing)
        assert main(["trees", "--out", str(tmp_path / "t.csv")]) == 1
        payload = json.loads((tmp_path / "failures.json").read_text())
        assert payload["failures"] == [{"check": "always fails", "measured": 0.5, "threshold": 0.1}]

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "hbmem.cli", "trees", "--max-m", "2",
                               "--out", str(tmp_path / "t.csv")], capture_output=True, text=True,
                              env={**os.environ})
        assert proc.returncode == 0
        assert proc.stdout.count("PASS") >= 2

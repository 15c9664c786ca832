import json

import pytest

from cvmindep.cli import EXIT_ERROR, EXIT_OK, EXIT_REJECT, main


def body(text):
    """Output without the timestamped first line."""
    return text.split("\n", 1)[1]


def config_line(text):
    line = text.splitlines()[1]
    assert line.startswith("# config: ")
    return json.loads(line[len("# config: "):])


@pytest.fixture
def iid_csv(tmp_path):
    p = tmp_path / "iid.csv"
    assert main(["sample", "--family", "gaussian", "--rho", "0", "--n", "150", "--d", "3", "--seed", "7",
                 "-o", str(p)]) == EXIT_OK
    return p


class TestSample:
    def test_output_embeds_config(self, iid_csv):
        text = iid_csv.read_text()
        cfg = config_line(text)
        assert cfg["family"] == "gaussian" and cfg["n"] == 150 and cfg["seed"] == 7
        assert len(body(text).strip().splitlines()) == 1 + 1 + 150

    def test_deterministic(self, tmp_path, iid_csv):
        p = tmp_path / "again.csv"
        main(["sample", "--family", "gaussian", "--rho", "0", "--n", "150", "--d", "3", "--seed", "7", "-o", str(p)])
        assert body(p.read_text()) == body(iid_csv.read_text())

    def test_missing_parameter(self, capsys):
        assert main(["sample", "--family", "frank", "--n", "10", "--d", "2"]) == EXIT_ERROR
        assert "--theta" in capsys.readouterr().err


class TestTestCommand:
    def test_report(self, iid_csv, tmp_path):
        out = tmp_path / "report.json"
        rc = main(["test", "--input", str(iid_csv), "--stats", "B,L,W,M,T", "--seed", "7", "-o", str(out)])
        rep = json.loads(out.read_text())
        assert rc == EXIT_OK
        assert [s["name"] for s in rep["statistics"]] == ["B", "L", "W", "M", "T"]
        for s in rep["statistics"]:
            assert s["reject"] == (s["value"] > s["critical"])
        assert rep["config"]["input"] == str(iid_csv)
        assert rep["config"]["seed"] == 7

    def test_null_acceptance_rate(self, tmp_path):
        rejections = 0
        for seed in range(20):
            p = tmp_path / f"null{seed}.csv"
            main(["sample", "--family", "gaussian", "--rho", "0", "--n", "100", "--d", "3", "--seed", str(seed),
                  "-o", str(p)])
            rc = main(["test", "-i", str(p), "--stats", "L", "--fail-on-reject", "-o", str(tmp_path / "r.json")])
            rejections += rc == EXIT_REJECT
        # P(Binomial(20, 0.05) > 4) < 0.003
        assert rejections <= 4

    def test_dependogram_rows(self, iid_csv, capsys):
        assert main(["test", "-i", str(iid_csv), "--stats", "M"]) == EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert len(rep["dependogram"]) == 4

    def test_published_critical_value(self, iid_csv, capsys):
        main(["test", "-i", str(iid_csv), "--stats", "L"])
        rep = json.loads(capsys.readouterr().out)
        assert rep["statistics"][0]["critical"] == 0.14045

    def test_clayton_rejects(self, tmp_path):
        p = tmp_path / "clayton.csv"
        main(["sample", "--family", "clayton", "--theta", "2", "--n", "1000", "--d", "2", "--seed", "1", "-o", str(p)])
        rc = main(["test", "-i", str(p), "--stats", "B,L,M,T", "--fail-on-reject", "-o", str(tmp_path / "r.json")])
        assert rc == EXIT_REJECT

    def test_missing_file(self, tmp_path, capsys):
        assert main(["test", "-i", str(tmp_path / "nope.csv")]) == EXIT_ERROR
        assert "error" in capsys.readouterr().err

    def test_bad_statistic(self, iid_csv):
        assert main(["test", "-i", str(iid_csv), "--stats", "Z"]) == EXIT_ERROR


class TestTables:
    args = ["tables", "--d", "3", "--stats", "B,L,q2,T", "--reps", "2000", "--w-reps", "2000", "--m", "32",
            "--seed", "3"]

    def test_rows(self, tmp_path):
        p = tmp_path / "t.tsv"
        assert main(self.args + ["-o", str(p)]) == EXIT_OK
        text = p.read_text()
        rows = [r.split("\t") for r in body(text).splitlines()[1:]]
        assert rows[0][0] == "statistic"
        got = {(r[0], r[1]): r for r in rows[1:]}
        assert float(got[("q2", "inversion")][2]) == pytest.approx(0.0824574, abs=1e-6)
        assert float(got[("T", "chi2")][2]) == pytest.approx(15.5073, abs=1e-4)
        assert got[("L", "spectral-mc")][5] == "0.14045"
        assert config_line(text)["m"] == 32

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        main(self.args + ["-o", str(a)])
        main(self.args + ["-o", str(b)])
        assert body(a.read_text()) == body(b.read_text())

    def test_budget_guard(self, capsys):
        assert main(["tables", "--d", "3", "--reps", "10", "--max-reps", "5"]) == EXIT_ERROR
        assert "budget" in capsys.readouterr().err

    def test_dimension_range(self):
        assert main(["tables", "--d", "7"]) == EXIT_ERROR


class TestPowerAndAre:
    def test_power_curves_start_at_level(self, capsys):
        assert main(["power", "--family", "frank", "--d", "3", "--stats", "L,M,W", "--points", "4"]) == EXIT_OK
        lines = [l for l in capsys.readouterr().out.splitlines() if l and not l.startswith("#")]
        rows = [l.split("\t") for l in lines[1:]]
        assert {r[0] for r in rows} == {"L", "M", "W"}
        for r in rows:
            if float(r[1]) == 0:
                assert float(r[2]) == pytest.approx(0.05, abs=1e-3)

    def test_fgm_weighted_above_linear(self, capsys):
        main(["power", "--family", "fgm", "--stats", "L,W", "--delta-max", "15", "--points", "4"])
        rows = [l.split("\t") for l in capsys.readouterr().out.splitlines() if l[:2] in ("L\t", "W\t")]
        beta = {(r[0], float(r[1])): float(r[2]) for r in rows}
        for dl in (5.0, 10.0, 15.0):
            assert beta[("W", dl)] > beta[("L", dl)]

    def test_unsupported_family(self, capsys):
        assert main(["power", "--family", "gumbel_hougaard", "--stats", "L", "--points", "2"]) == EXIT_ERROR
        assert "gumbel_hougaard" in capsys.readouterr().err

    def test_are_shape(self, capsys):
        assert main(["are", "--families", "fgm,frank"]) == EXIT_OK
        out = capsys.readouterr().out
        rows = [l.split("\t") for l in out.splitlines() if not l.startswith("#")]
        assert rows[0] == ["family", "best", "L", "L2", "M", "M2", "W"]
        assert rows[1][0] == "fgm" and rows[1][3] == "0.00"
        assert config_line(out)["families"] == ["fgm", "frank"]


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "cvmindep", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "tables" in res.stdout

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from braymoore import cli, io, tap
from braymoore.errors import InvalidInputError
from braymoore.spectral import SpectralMeasure


class TestIo:
    def test_fmt(self):
        assert io.fmt(0.1) == "0.10000000000000001"
        assert [io.fmt(v) for v in (math.inf, -math.inf, math.nan)] == ["inf", "-inf", "nan"]
        assert io.fmt(True) == "true" and io.fmt(np.int64(3)) == "3"

    def test_dumps_round_trip(self):
        obj = {"b": 1 / 3, "a": [math.inf, 2, "x"], "c": False}
        text = io.dumps(obj)
        assert text.index('"b"') < text.index('"a"')
        back = json.loads(text)
        assert back["b"] == 1 / 3 and back["a"] == ["inf", 2, "x"] and back["c"] is False

    def test_parse_m_vector(self):
        np.testing.assert_array_equal(io.parse_m_vector("[0.1, -0.2]"), [0.1, -0.2])
        np.testing.assert_array_equal(io.parse_m_vector("# m\n0.1\n\n-0.2\n"), [0.1, -0.2])
        for bad in ("", "[1, ", '["a"]', "0.1\nabc"):
            with pytest.raises(InvalidInputError):
                io.parse_m_vector(bad)

    def test_parse_config(self):
        cfg = io.parse_config("beta = 1.5  # comment\n\ngoe-scale=2\n")
        assert cfg == {"beta": "1.5", "goe_scale": "2"}
        with pytest.raises(InvalidInputError):
            io.parse_config("novalue\n")
        with pytest.raises(InvalidInputError):
            io.parse_config(" = 3\n")

    def test_atoms_round_trip(self, tmp_path):
        nu = SpectralMeasure([-1.0, 0.3], [0.4, 0.6])
        path = tmp_path / "a.json"
        io.write_atoms(nu, path)
        assert io.read_atoms(path).atoms == nu.atoms
        with pytest.raises(InvalidInputError, match="cannot read"):
            io.read_atoms(tmp_path / "missing.json")


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def files(write_json):
    return {
        "m": write_json("m.json", [0.8] * 16),
        "m_bad": write_json("bad.json", [0.5, 1.0, 0.2]),
        "m_zero_v": write_json("zv.json", [tap.zero_v_uniform_value(1.2)] * 24),
        "d0": write_json("d0.json", {"atoms": [[0.0, 1.0]]}),
    }


class TestCli:
    def test_freeconv_text_and_csv(self, files, capsys):
        code, out, _ = run(["freeconv", "--atoms", files["d0"], "--sigma2", "1", "--grid", "5"],
                           capsys)
        assert code == 0
        lp = float(next(l for l in out.splitlines() if l.startswith("log_potential")).split()[1])
        assert lp == pytest.approx(-0.5, abs=1e-9)
        code, out, err = run(["freeconv", "--atoms", files["d0"], "--sigma2", "1", "--grid", "3",
                              "--format", "csv"], capsys)
        lines = out.splitlines()
        assert lines[0] == "x,density" and len(lines) == 4
        assert float(lines[2].split(",")[1]) == pytest.approx(1 / math.pi)
        assert "log_potential" in err

    def test_freeconv_default_sigma2_from_beta(self, files, capsys):
        code, out, _ = run(["freeconv", "--atoms", files["d0"], "--beta", "1", "--format", "json"],
                           capsys)
        data = json.loads(out)
        assert data["sigma2"] == 2.0
        assert data["support"][0][1] == pytest.approx(2 * math.sqrt(2))

    def test_predict(self, files, capsys):
        code, out, _ = run(["predict", "--m-file", files["m"], "--beta", "1", "--format", "json"],
                           capsys)
        d = json.loads(out)
        assert code == 0 and d["branch"] == "boundary" and d["g_star"] == pytest.approx(0.36)
        assert d["total"] == pytest.approx(d["upsilon"] + d["correction"])
        assert d["class"] == "parallel" and d["degenerate"] is False

    def test_predict_degenerate(self, files, capsys):
        code, out, _ = run(["predict", "--m-file", files["m_zero_v"], "--beta", "1.2"], capsys)
        assert code == 0
        assert "degenerate true" in out and "total -inf" in out

    def test_bad_m_names_index(self, files, capsys):
        code, _, err = run(["predict", "--m-file", files["m_bad"]], capsys)
        assert code == 2 and "index 1" in err

    @pytest.mark.parametrize("argv", [
        ["predict"],
        ["predict", "--m-file", "/nonexistent/m.json"],
        ["simulate", "--n", "16", "--samples", "0"],
        ["simulate", "--samples", "4"],
        ["sweep", "--n-list", "32,16", "--samples", "4"],
        ["verify", "--suite", "nosuch"],
        ["upsilon", "--beta", "abc"],
        ["nosuchcommand"],
    ])
    def test_usage_errors_exit_2(self, argv, capsys):
        assert run(argv, capsys)[0] == 2

    def test_config_supplies_defaults(self, files, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("beta = 2\n")
        _, with_cfg, _ = run(["upsilon", "--m-file", files["m"], "--config", str(cfg)], capsys)
        _, explicit, _ = run(["upsilon", "--m-file", files["m"], "--beta", "2"], capsys)
        assert with_cfg == explicit
        # flags win over config values
        _, flag, _ = run(["upsilon", "--m-file", files["m"], "--config", str(cfg), "--beta", "1"],
                         capsys)
        _, plain, _ = run(["upsilon", "--m-file", files["m"], "--beta", "1"], capsys)
        assert flag == plain
        cfg.write_text("nonsense = 1\n")
        assert run(["upsilon", "--m-file", files["m"], "--config", str(cfg)], capsys)[0] == 2

    def test_simulate_deterministic_bytes(self, capsys):
        argv = ["simulate", "--n", "64", "--samples", "50", "--seed", "7"]
        a = run(argv, capsys)
        b = run(argv, capsys)
        assert a == b and a[0] == 0
        assert "wall_time" not in a[1]
        assert "wall_time" in run(argv + ["--timing"], capsys)[1]

    def test_simulate_tap_json(self, files, capsys):
        code, out, _ = run(["simulate", "--m-file", files["m"], "--samples", "20", "--format",
                            "json"], capsys)
        rec = json.loads(out)
        assert code == 0 and rec["mode"] == "tap-direct" and rec["master_seed"] == 0x5EED

    def test_sweep_writes_files(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        code, stdout, _ = run(["sweep", "--n-list", "8,16", "--samples", "6", "--out", str(out)],
                              capsys)
        assert code == 0
        lines = (tmp_path / "sweep.jsonl").read_text().splitlines()
        assert [json.loads(l)["n"] for l in lines] == [8, 16]
        csv = (tmp_path / "sweep.csv").read_text().splitlines()
        assert csv[0] == ",".join(io.CSV_COLUMNS) and len(csv) == 3
        assert stdout.splitlines() == csv

    def test_verify_pass_and_injected_failure(self, capsys):
        code, out, _ = run(["verify", "--suite", "rotations,tap"], capsys)
        assert code == 0 and "2/2 suites passed" in out
        code, out, _ = run(["verify", "--suite", "schur", "--inject-failure", "schur"], capsys)
        assert code == 1 and "failing invariant(s): schur" in out

    def test_calibrate(self, capsys):
        code, out, _ = run(["calibrate", "--beta", "1", "--n", "128", "--samples", "4",
                            "--format", "json"], capsys)
        d = json.loads(out)
        assert code == 0 and d["selected_sigma2"] == 2.0 and d["vardet_consistent"] is True

    def test_console_entry_point_subprocess(self):
        argv = [sys.executable, "-m", "braymoore.cli", "simulate", "--n", "32", "--samples", "8"]
        a = subprocess.run(argv, capture_output=True, text=True, check=True).stdout
        b = subprocess.run(argv, capture_output=True, text=True, check=True).stdout
        assert a == b and "quenched" in a

import csv
import math
import subprocess
import sys

import numpy as np
import pytest

from serfspin.cli import fmt, main
from serfspin.fitting import fid_model

FAST = ["--t-end-ms", "4"]


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestFormatting:
    def test_round_trip_digits(self):
        for x in (0.1, 1 / 3, 2.5e-17, -1234567.891, math.pi * 1e10):
            assert float(fmt(x)) == x
        assert fmt(True) == "true" and fmt(np.bool_(False)) == "false" and fmt(3) == "3"


class TestFid:
    @staticmethod
    @pytest.fixture(scope="class")
    def out(tmp_path_factory):
        d = tmp_path_factory.mktemp("fid")
        assert main(["fid", "--B-nT", "28", "--out-dir", str(d)] + FAST) == 0
        return d

    def test_headers_and_shape(self, out):
        rows = read(out / "fid.csv")
        assert rows[0] == ["t_s", "circular", "linear"]
        assert len(rows) == 4002
        fit = read(out / "fid_fit.csv")
        assert fit[0] == ["probe", "A", "T1_s", "C", "Gamma0_per_s", "omega0_rad_s", "phi_rad", "residual_rms",
                          "converged"]
        assert [r[0] for r in fit[1:]] == ["circular", "linear"]
        w = {r[0]: float(r[5]) for r in fit[1:]}
        assert w["linear"] / w["circular"] == pytest.approx(2, rel=0.02)

    def test_lf_line_endings(self, out):
        raw = (out / "fid.csv").read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")

    def test_deterministic(self, out, tmp_path):
        assert main(["fid", "--B-nT", "28", "--out-dir", str(tmp_path)] + FAST) == 0
        for name in ("fid.csv", "fid_fit.csv"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_fit_reproduces_sidecar(self, out, tmp_path):
        assert main(["fit", str(out / "fid.csv"), "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "fit.csv").read_bytes() == (out / "fid_fit.csv").read_bytes()

    def test_zero_field_is_degenerate(self, tmp_path):
        assert main(["fid", "--B-nT", "0", "--out-dir", str(tmp_path)] + FAST) == 4
        rows = read(tmp_path / "fid.csv")
        assert len(rows) == 4002
        assert all(r[-1] == "false" for r in read(tmp_path / "fid_fit.csv")[1:])

    def test_single_probe(self, tmp_path):
        assert main(["fid", "--probe", "linear", "--out-dir", str(tmp_path)] + FAST) == 0
        assert [r[0] for r in read(tmp_path / "fid_fit.csv")[1:]] == ["linear"]


class TestUsage:
    @pytest.mark.parametrize("argv", [
        [],
        ["fid", "--P", "1.5"],
        ["fid", "--dt-us", "-1"],
        ["sweep", "--B-count", "0"],
        ["sweep", "--bogus"],
        ["eig", "--I", "9"],
        ["sweep", "--B-nT", "5,x"],
        ["sweep", "--B-nT", "5,2"],
    ])
    def test_exit_2(self, argv, tmp_path):
        assert main(argv + ["--out-dir", str(tmp_path)] if argv else argv) == 2

    def test_config_file_and_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# eigen table\nB-nT = 10\nR_SD=0\n")
        assert main(["eig", "--config", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
        assert main(["eig", "--config", str(cfg), "--R-SD", "147", "--out-dir", str(tmp_path / "b")]) == 0
        a, b = read(tmp_path / "a" / "eig.csv"), read(tmp_path / "b" / "eig.csv")
        assert a != b
        assert main(["eig", "--B-nT", "10", "--R-SD", "0", "--out-dir", str(tmp_path / "c")]) == 0
        assert read(tmp_path / "c" / "eig.csv") == a

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("unknown_key = 3\n")
        assert main(["eig", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
        cfg.write_text("no equals sign\n")
        assert main(["eig", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
        assert main(["eig", "--config", str(tmp_path / "missing.cfg")]) == 2


class TestEig:
    def test_table(self, tmp_path):
        assert main(["eig", "--B-nT", "10", "--out-dir", str(tmp_path)]) == 0
        rows = read(tmp_path / "eig.csv")
        assert rows[0] == ["L", "M", "branch", "re_lambda_per_s", "im_lambda_rad_s", "classification_overlap"]
        body = rows[1:]
        assert len(body) == 34
        lam = {(int(r[0]), int(r[1]), r[2]): complex(float(r[3]), float(r[4])) for r in body}
        for (L, M, br), v in lam.items():
            assert abs(lam[(L, -M, br)] - v.conjugate()) <= 1e-9 * max(abs(v), 1)

    def test_low_field_frequency_doubles(self, tmp_path):
        im = []
        for B in ("0.01", "0.02"):
            d = tmp_path / B
            assert main(["eig", "--B-nT", B, "--out-dir", str(d)]) == 0
            row = next(r for r in read(d / "eig.csv")[1:] if r[:3] == ["1", "1", "+"])
            im.append(float(row[4]))
        assert im[1] / im[0] == pytest.approx(2, abs=1e-6)


class TestPerturb:
    def test_ratios(self, tmp_path):
        assert main(["perturb", "--B-nT", "10", "--out-dir", str(tmp_path)]) == 0
        rows = read(tmp_path / "perturb.csv")
        header, body = rows[0], rows[1:]
        assert header[-1] == "warning" and len(body) == 2
        for r in body:
            rec = dict(zip(header, r))
            assert float(rec["gamma_ratio"]) == pytest.approx(1, abs=0.05)
            assert float(rec["omega_ratio"]) == pytest.approx(1, abs=0.05)
            assert rec["warning"] == ""

    def test_warning_column(self, tmp_path):
        main(["perturb", "--B-nT", "10", "--P", "0.5", "--out-dir", str(tmp_path)] + FAST)
        rows = read(tmp_path / "perturb.csv")
        assert all("polarization" in r[-1] for r in rows[1:])


class TestFitCommand:
    def test_synthetic_recovery(self, tmp_path):
        t = np.arange(10001) * 1e-6
        truth = (0.2, 5e-3, 1.0, 300.0, 2 * math.pi * 130, 0.3)
        path = tmp_path / "sig.csv"
        with open(path, "w") as fh:
            fh.write("t_s,value\n")
            for ti, yi in zip(t, fid_model(t, *truth)):
                fh.write(f"{fmt(ti)},{fmt(yi)}\n")
        assert main(["fit", str(path), "--t0-us", "0", "--out-dir", str(tmp_path)]) == 0
        row = read(tmp_path / "fit.csv")[1]
        assert row[0] == "value" and row[-1] == "true"
        np.testing.assert_allclose([float(x) for x in row[1:7]], truth, rtol=1e-3)

    @pytest.mark.parametrize("content", ["1,2\n3,4\n", "t_s,value\n0,abc\n", "", "t_s,value\n0,1\n1e-6\n"])
    def test_malformed(self, tmp_path, content):
        path = tmp_path / "bad.csv"
        path.write_text(content)
        assert main(["fit", str(path), "--out-dir", str(tmp_path)]) == 2

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("t_s,value\n" + "".join(f"{i * 1e-6},{i}\n" for i in range(100)))
        assert main(["fit", str(path), "--out-dir", str(tmp_path)]) == 2


class TestSweep:
    ARGS = ["sweep", "--B-min-nT", "10", "--B-max-nT", "40", "--B-count", "3"] + FAST

    def test_deterministic_and_ordered(self, tmp_path):
        assert main(self.ARGS + ["--out-dir", str(tmp_path / "a")]) == 0
        assert main(self.ARGS + ["--jobs", "2", "--out-dir", str(tmp_path / "b")]) == 0
        for name in ("sweep.csv", "sweep_summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        rows = read(tmp_path / "a" / "sweep.csv")
        assert rows[0] == ["B_nT", "probe", "Gamma0_per_s", "omega0_rad_s", "converged"]
        keys = [(float(r[0]), r[1]) for r in rows[1:]]
        assert keys == sorted(keys) and len(keys) == 6

    def test_single_point_matches_fid(self, tmp_path):
        assert main(["sweep", "--B-nT", "28", "--out-dir", str(tmp_path)] + FAST) == 0
        assert main(["fid", "--B-nT", "28", "--out-dir", str(tmp_path)] + FAST) == 0
        sweep = {r[1]: r[2:4] for r in read(tmp_path / "sweep.csv")[1:]}
        fid = {r[0]: [r[4], r[5]] for r in read(tmp_path / "fid_fit.csv")[1:]}
        assert sweep == fid

    def test_quorum_failure(self, tmp_path):
        assert main(["sweep", "--B-nT", "0.2,0.4", "--out-dir", str(tmp_path)] + FAST) == 5
        assert (tmp_path / "sweep.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "serfspin.cli", "eig", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "eig.csv").exists()

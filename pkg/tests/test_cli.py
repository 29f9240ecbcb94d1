import csv
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from sde_gridopt import (
    LinearSdeModel,
    WienerIncrements,
    grid_from_density,
    run_filter,
    uniform_density,
)
from sde_gridopt.cli import (
    cmd_convergence,
    cmd_gramian,
    cmd_mc_verify,
    cmd_ou_table,
    main,
    parse_config,
)

OU_CONFIG = """\
[model]
A = [[-1.0]]
B = [[1.0]]
M = [[1.0]]
T = 1.0

[grid]
kind = uniform
N_sweep = [16, 32, 64]

[mc]
paths = 2000
seed = 2024
"""


def write_config(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestParseConfig:
    def test_roundtrip(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, OU_CONFIG))
        assert cfg.model.n == 1 and cfg.model.T == 1.0
        assert cfg.grid_kind == "uniform"
        assert cfg.n_sweep == [16, 32, 64]
        assert cfg.paths == 2000 and cfg.seed == 2024
        assert cfg.outdir == "out"
        assert cfg.ou_sweep[0] == 0.01

    def test_missing_model_section(self, tmp_path):
        path = write_config(tmp_path, "[grid]\nkind = uniform\n")
        with pytest.raises(ValueError):
            parse_config(path)

    def test_bad_literal(self, tmp_path):
        bad = OU_CONFIG.replace("[[-1.0]]", "matrix(-1)")
        with pytest.raises(ValueError):
            parse_config(write_config(tmp_path, bad))

    def test_unknown_grid_kind(self, tmp_path):
        bad = OU_CONFIG.replace("kind = uniform", "kind = chebyshev")
        with pytest.raises(ValueError):
            parse_config(write_config(tmp_path, bad))

    def test_non_increasing_sweep(self, tmp_path):
        bad = OU_CONFIG.replace("[16, 32, 64]", "[16, 16]")
        with pytest.raises(ValueError):
            parse_config(write_config(tmp_path, bad))

    def test_grid_file_resolved_relative_to_config(self, tmp_path):
        text = OU_CONFIG.replace("kind = uniform", "kind = file\nfile = pts.txt")
        cfg = parse_config(write_config(tmp_path, text))
        assert cfg.grid_file == str(tmp_path / "pts.txt")

    def test_file_kind_needs_file_entry(self, tmp_path):
        text = OU_CONFIG.replace("kind = uniform", "kind = file")
        with pytest.raises(ValueError):
            parse_config(write_config(tmp_path, text))

    def test_path_floor(self, tmp_path):
        bad = OU_CONFIG.replace("paths = 2000", "paths = 10")
        with pytest.raises(ValueError):
            parse_config(write_config(tmp_path, bad))


class TestGramian:
    def test_ou_table_values(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, OU_CONFIG))
        cfg.outdir = str(tmp_path / "out")
        path = cmd_gramian(cfg, quiet=True)
        header, rows = read_csv(path)
        assert header == ["t", "G_11", "Q_11", "K_11", "F", "S"]
        assert len(rows) == 4097
        first, last = rows[0], rows[-1]
        assert float(first[0]) == 0.0 and float(last[0]) == 1.0
        assert float(first[1]) == 0.0 and float(first[2]) == 0.0
        assert float(first[3]) == pytest.approx(1.0 / 12.0, rel=1e-12)
        assert float(first[4]) == pytest.approx(math.exp(-2.0) / 12.0, rel=1e-9)
        assert float(first[5]) == pytest.approx((1.0 - math.exp(-2.0)) / 24.0, rel=1e-9)
        assert float(last[1]) == pytest.approx(0.43233235838169365, rel=1e-12)
        assert float(last[2]) == pytest.approx(0.43233235838169365, rel=1e-10)
        assert float(last[3]) == pytest.approx(0.03275595748796561, rel=1e-10)
        assert float(last[4]) == pytest.approx(1.0 / 12.0, rel=1e-12)
        assert float(last[5]) == 0.0


class TestConvergence:
    def test_uniform_sweep_and_limit_row(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, OU_CONFIG))
        cfg.outdir = str(tmp_path / "out")
        path = cmd_convergence(cfg, quiet=True)
        header, rows = read_csv(path)
        assert header == ["N", "T_N", "I_N", "N2T_N", "N2I_N"]
        assert [r[0] for r in rows] == ["16", "32", "64", "limit"]
        limit = rows[-1]
        assert limit[1] == "" and limit[2] == ""
        phi = float(limit[3])
        ups = float(limit[4])
        assert phi == pytest.approx(0.036027696531807804, rel=1e-9)
        assert ups == pytest.approx((1.0 + math.exp(-2.0)) / 48.0, rel=1e-8)
        gaps_t = [abs(float(r[3]) - phi) for r in rows[:-1]]
        gaps_i = [abs(float(r[4]) - ups) for r in rows[:-1]]
        assert gaps_t == sorted(gaps_t, reverse=True)
        assert gaps_i == sorted(gaps_i, reverse=True)

    def test_reruns_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path, OU_CONFIG)
        outs = []
        for name in ("a", "b"):
            rc = main(
                ["convergence", "--config", cfg_path, "--out", str(tmp_path / name), "--quiet"]
            )
            assert rc == 0
            outs.append((tmp_path / name / "convergence.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_terminal_optimal_reaches_limit(self, tmp_path):
        text = OU_CONFIG.replace("kind = uniform", "kind = terminal-optimal").replace(
            "[16, 32, 64]", "[64, 512]"
        )
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        _, rows = read_csv(cmd_convergence(cfg, quiet=True))
        phi = float(rows[-1][3])
        assert phi == pytest.approx(0.03240134269109764, rel=1e-8)
        assert abs(float(rows[1][3]) - phi) < abs(float(rows[0][3]) - phi)
        assert float(rows[1][3]) == pytest.approx(phi, rel=1e-2)

    def test_integral_optimal_has_empty_phi_cell(self, tmp_path):
        text = OU_CONFIG.replace("kind = uniform", "kind = integral-optimal").replace(
            "[16, 32, 64]", "[64, 256]"
        )
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        _, rows = read_csv(cmd_convergence(cfg, quiet=True))
        limit = rows[-1]
        assert limit[0] == "limit" and limit[3] == ""
        ups = float(limit[4])
        assert abs(float(rows[1][4]) - ups) < abs(float(rows[0][4]) - ups)

    def test_zero_drift_columns_vanish(self, tmp_path):
        text = OU_CONFIG.replace("[[-1.0]]", "[[0.0]]")
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        _, rows = read_csv(cmd_convergence(cfg, quiet=True))
        for row in rows:
            assert float(row[3] or 0.0) == 0.0
            assert float(row[4] or 0.0) == 0.0

    def test_grid_file_kind(self, tmp_path):
        grid = grid_from_density(uniform_density(1.0), 10)
        np.savetxt(tmp_path / "pts.txt", grid.points, fmt="%.17g")
        text = OU_CONFIG.replace("kind = uniform", "kind = file\nfile = pts.txt")
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        _, rows = read_csv(cmd_convergence(cfg, quiet=True))
        assert len(rows) == 1  # no synthetic limit row for external grids
        assert rows[0][0] == "10"
        model = cfg.model
        zero = WienerIncrements(grid, np.zeros((10, 1)))
        _, rep = run_filter(model, grid, np.zeros(1), zero)
        assert float(rows[0][1]) == rep.terminal

    def test_grid_file_horizon_mismatch(self, tmp_path):
        np.savetxt(tmp_path / "pts.txt", np.linspace(0.0, 2.0, 11))
        text = OU_CONFIG.replace("kind = uniform", "kind = file\nfile = pts.txt")
        rc = main(["convergence", "--config", write_config(tmp_path, text), "--quiet"])
        assert rc == 2

    def test_missing_n_errors(self, tmp_path, capsys):
        text = OU_CONFIG.replace("N_sweep = [16, 32, 64]\n", "")
        rc = main(["convergence", "--config", write_config(tmp_path, text), "--quiet"])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_thread_count_env(self, tmp_path, monkeypatch):
        cfg_path = write_config(tmp_path, OU_CONFIG)
        blobs = []
        for threads, name in (("1", "t1"), ("4", "t4")):
            monkeypatch.setenv("SDE_GRIDOPT_THREADS", threads)
            rc = main(
                ["convergence", "--config", cfg_path, "--out", str(tmp_path / name), "--quiet"]
            )
            assert rc == 0
            blobs.append((tmp_path / name / "convergence.csv").read_bytes())
        assert blobs[0] == blobs[1]
        monkeypatch.setenv("SDE_GRIDOPT_THREADS", "0")
        rc = main(["convergence", "--config", cfg_path, "--out", str(tmp_path / "t0"), "--quiet"])
        assert rc == 2


class TestMcVerify:
    def test_consistency_and_determinism(self, tmp_path):
        text = OU_CONFIG.replace("[16, 32, 64]", "[8, 16]")
        cfg_path = write_config(tmp_path, text)
        blobs = []
        for name in ("a", "b"):
            rc = main(
                ["mc-verify", "--config", cfg_path, "--out", str(tmp_path / name), "--quiet"]
            )
            assert rc == 0
            blobs.append((tmp_path / name / "mc_verify.csv").read_bytes())
        assert blobs[0] == blobs[1]
        header, rows = read_csv(tmp_path / "a" / "mc_verify.csv")
        assert header == ["N", "sample_mse", "predicted", "stderr", "zscore"]
        for row in rows:
            assert abs(float(row[4])) <= 4.0

    def test_predicted_column_matches_recursion(self, tmp_path):
        text = OU_CONFIG.replace("[16, 32, 64]", "[8]")
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        _, rows = read_csv(cmd_mc_verify(cfg, quiet=True))
        grid = grid_from_density(uniform_density(1.0), 8)
        zero = WienerIncrements(grid, np.zeros((8, 1)))
        _, rep = run_filter(cfg.model, grid, np.zeros(1), zero)
        assert float(rows[0][2]) == rep.terminal  # %.17g roundtrips exactly

    def test_seed_override_changes_samples(self, tmp_path):
        text = OU_CONFIG.replace("[16, 32, 64]", "[8]")
        cfg_path = write_config(tmp_path, text)
        main(["mc-verify", "--config", cfg_path, "--out", str(tmp_path / "a"), "--quiet"])
        main(
            [
                "mc-verify",
                "--config",
                cfg_path,
                "--out",
                str(tmp_path / "b"),
                "--seed",
                "99",
                "--quiet",
            ]
        )
        _, rows_a = read_csv(tmp_path / "a" / "mc_verify.csv")
        _, rows_b = read_csv(tmp_path / "b" / "mc_verify.csv")
        assert rows_a[0][1] != rows_b[0][1]
        assert rows_a[0][2] == rows_b[0][2]  # predicted value is seed-free

    def test_zero_drift_exact(self, tmp_path):
        text = OU_CONFIG.replace("[[-1.0]]", "[[0.0]]").replace("[16, 32, 64]", "[8]")
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        _, rows = read_csv(cmd_mc_verify(cfg, quiet=True))
        assert float(rows[0][1]) == 0.0 and float(rows[0][2]) == 0.0
        assert float(rows[0][4]) == 0.0


class TestOuTable:
    def test_reference_row(self, tmp_path):
        text = OU_CONFIG + "\n[ou]\nT_sweep = [0.01, 1.0, 30.0]\n"
        cfg = parse_config(write_config(tmp_path, text))
        cfg.outdir = str(tmp_path / "out")
        path = cmd_ou_table(cfg, quiet=True)
        header, rows = read_csv(path)
        assert header[:3] == ["T", "min_phi", "min_phi_quad"]
        assert len(rows) == 3
        t1 = {k: float(v) for k, v in zip(header, rows[1])}
        assert t1["T"] == 1.0
        assert t1["ratio"] == pytest.approx(1.1119198631761187, rel=1e-12)
        assert t1["min_phi_quad"] == pytest.approx(t1["min_phi"], rel=1e-9)
        assert t1["phi_uniform_quad"] == pytest.approx(t1["phi_uniform"], rel=1e-9)
        assert t1["ratio_quad"] == pytest.approx(t1["ratio"], rel=1e-8)
        t30 = {k: float(v) for k, v in zip(header, rows[2])}
        assert t30["ratio"] == pytest.approx(t30["ratio_asymptote"], rel=1e-6)
        t001 = {k: float(v) for k, v in zip(header, rows[0])}
        assert t001["ratio"] == pytest.approx(1.0, abs=1e-4)
        assert t001["min_phi_quad"] == pytest.approx(t001["min_phi"], rel=1e-8)

    def test_rejects_matrix_model(self, tmp_path):
        text = OU_CONFIG.replace("[[-1.0]]", "[[-1.0, 0.0], [0.0, -2.0]]").replace(
            "B = [[1.0]]", "B = [[1.0, 0.0], [0.0, 1.0]]"
        ).replace("M = [[1.0]]", "M = [[1.0, 0.0], [0.0, 1.0]]")
        rc = main(["ou-table", "--config", write_config(tmp_path, text), "--quiet"])
        assert rc == 2


class TestMain:
    def test_invalid_model_exits_2(self, tmp_path, capsys):
        text = OU_CONFIG.replace("T = 1.0", "T = 0.0")
        rc = main(["convergence", "--config", write_config(tmp_path, text), "--quiet"])
        assert rc == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "horizon-not-positive" in err

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        rc = main(["gramian", "--config", str(tmp_path / "nope.cfg"), "--quiet"])
        assert rc == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_seed_override_exits_2(self, tmp_path):
        cfg_path = write_config(tmp_path, OU_CONFIG)
        rc = main(["mc-verify", "--config", cfg_path, "--seed", "-3", "--quiet"])
        assert rc == 2

    def test_quiet_suppresses_progress(self, tmp_path, capsys):
        text = OU_CONFIG.replace("[16, 32, 64]", "[8]")
        cfg_path = write_config(tmp_path, text)
        main(["convergence", "--config", cfg_path, "--out", str(tmp_path / "o1"), "--quiet"])
        assert capsys.readouterr().out == ""
        main(["convergence", "--config", cfg_path, "--out", str(tmp_path / "o2")])
        out = capsys.readouterr().out
        assert out.startswith("wrote ") and "convergence.csv" in out

    def test_console_script_installed(self, tmp_path):
        exe = shutil.which("sde-gridopt")
        assert exe is not None
        text = OU_CONFIG + "\n[ou]\nT_sweep = [1.0]\n"
        cfg_path = write_config(tmp_path, text)
        proc = subprocess.run(
            [exe, "ou-table", "--config", cfg_path, "--out", str(tmp_path / "o"), "--quiet"],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "o" / "ou_table.csv").exists()

import csv

import numpy as np
import pytest

from pharmonic.cli import main
from pharmonic.config import ConfigError, load_config, parse_assignments
from pharmonic.imaging import RgbImage, quantize, read_ppm, write_ppm

SMALL = ["--set", "nx=6", "--set", "ny=6", "--set", "t_final=0.05"]


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


def test_run_constant_preset(tmp_path):
    assert main(["run", "--out", str(tmp_path), "--set", "preset=constant", *SMALL]) == 0
    rows = read_csv(tmp_path / "trace.csv")
    assert len(rows) == 6
    assert all(float(r["cum_dissipation"]) == 0.0 for r in rows)
    assert list(rows[0]) == ["step", "time", "e_diffusion", "e_pterm", "e_penalty", "e_fidelity", "e_total",
                             "dt_norm_sq", "cum_dissipation", "constraint_l2", "max_modulus", "orth_defect",
                             "newton_iters"]


def test_run_random_unit_energy_decreases(tmp_path):
    args = ["run", "--out", str(tmp_path), "--set", "preset=random-unit", "--set", "p=2",
            "--set", "nx=8", "--set", "ny=8", "--set", "tau=0.01", "--set", "t_final=0.1"]
    assert main(args) == 0
    e = [float(r["e_total"]) for r in read_csv(tmp_path / "trace.csv")]
    assert len(e) == 11
    assert all(b <= a for a, b in zip(e, e[1:]))


def test_manifest_lists_existing_outputs(tmp_path):
    assert main(["run", "--out", str(tmp_path), "--set", "snapshot_every=2", *SMALL]) == 0
    lines = (tmp_path / "manifest.txt").read_text().splitlines()
    entries = dict(line.split(" = ", 1) for line in lines if not line.startswith("output = "))
    outputs = [line.split(" = ", 1)[1] for line in lines if line.startswith("output = ")]
    assert entries["config.nx"] == "6" and entries["config.t_final"] == "0.05"
    assert "version" in entries and "wall_clock.flow" in entries
    assert any(o.endswith("snapshot_00002.vtk") for o in outputs)
    from pathlib import Path
    assert all(Path(o).exists() for o in outputs)


def test_unknown_key_is_fatal(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("p = 2\n# comment\nlamda = 0.5\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "lamda" in err and ":3:" in err


def test_config_parse_errors_name_lines():
    with pytest.raises(ConfigError, match=r"<config>:2:"):
        parse_assignments(["p = 1", "no equals sign"])
    with pytest.raises(ConfigError, match="invalid value"):
        load_config(None, ["nx=abc"])


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("p = 1.5\nlambda = 3  # weight\ntau = 0.1\n")
    c = load_config(cfg, ["p=2.5"])
    assert c.solver.p == 2.5 and c.solver.lam == 3.0 and c.solver.tau == 0.1
    assert c.solver.delta == 1e-3  # built-in default
    assert dict(c.items())["lambda"] == "3.0"


def test_defaults():
    c = load_config()
    s = c.solver
    assert (s.p, s.eps, s.alpha, s.delta, s.lam, s.tau, s.t_final, s.newton_tol) == \
        (1.0, 1e-2, 2.0, 1e-3, 1.0, 1e-2, 1.0, 1e-10)
    assert (c.nx, c.ny) == (32, 32)


def test_nonconvergence_exit_code(tmp_path, capsys):
    args = ["run", "--out", str(tmp_path), "--set", "preset=random-unit", "--set", "newton_max_iter=1", *SMALL]
    assert main(args) == 3
    assert "step 1" in capsys.readouterr().err


def test_run_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--out", str(d), "--set", "preset=random-unit", *SMALL]) == 0
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()


def test_denoise_constant_image_unchanged(tmp_path):
    q = np.tile(np.array([40, 120, 200]), (5, 6, 1))
    src = tmp_path / "in.ppm"
    write_ppm(src, RgbImage(q / 255))
    out = tmp_path / "out.ppm"
    assert main(["denoise", "--input", str(src), "--output", str(out), "--out", str(tmp_path),
                 "--set", "t_final=0.05"]) == 0
    np.testing.assert_array_equal(quantize(read_ppm(out).pixels), q)
    manifest = (tmp_path / "manifest.txt").read_text()
    assert "input_sha256 = " in manifest and "final_unregularized_J" in manifest


def test_denoise_rejects_tiny_image(tmp_path, capsys):
    src = tmp_path / "tiny.ppm"
    write_ppm(src, RgbImage(np.ones((1, 2, 3)) * 0.5))
    code = main(["denoise", "--input", str(src), "--out", str(tmp_path)])
    assert code == 4
    assert "2x2" in capsys.readouterr().err


def test_denoise_missing_file(tmp_path):
    assert main(["denoise", "--input", str(tmp_path / "nope.ppm"), "--out", str(tmp_path)]) == 4


def test_single_value_sweep_matches_run(tmp_path):
    run_dir, sweep_dir = tmp_path / "run", tmp_path / "sweep"
    common = [*SMALL, "--set", "preset=smoothed-vortex", "--set", "p=1.5"]
    assert main(["run", "--out", str(run_dir), *common, "--set", "delta=0.01"]) == 0
    assert main(["sweep", "--out", str(sweep_dir), *common, "--axis", "delta", "--values", "0.01"]) == 0
    assert (run_dir / "trace.csv").read_bytes() == (sweep_dir / "trace_delta_0.01.csv").read_bytes()
    rows = read_csv(sweep_dir / "summary_delta.csv")
    assert len(rows) == 1 and float(rows[0]["value"]) == 0.01


def test_eps_sweep_pterm_above_unregularized(tmp_path):
    vals = [0.3, 0.1, 0.03, 0.01]
    assert main(["sweep", "--out", str(tmp_path), *SMALL, "--set", "p=1", "--set", "lambda=0",
                 "--axis", "eps", "--values", ",".join(map(str, vals))]) == 0
    rows = read_csv(tmp_path / "summary_eps.csv")
    gaps = [float(r["e_pterm"]) - float(r["unregularized"]) for r in rows]
    assert all(g >= 0 for g in gaps)
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_sweep_h_axis(tmp_path):
    assert main(["sweep", "--out", str(tmp_path), "--set", "t_final=0.02", "--axis", "h",
                 "--values", "0.5,0.25"]) == 0
    rows = read_csv(tmp_path / "summary_h.csv")
    assert [r["nx"] for r in rows] == ["2", "4"]


def test_sweep_parallel_matches_serial(tmp_path):
    args = [*SMALL, "--axis", "delta", "--values", "0.1,0.01"]
    assert main(["sweep", "--out", str(tmp_path / "s"), *args]) == 0
    assert main(["sweep", "--out", str(tmp_path / "p"), "--jobs", "2", *args]) == 0
    assert (tmp_path / "s" / "summary_delta.csv").read_bytes() == (tmp_path / "p" / "summary_delta.csv").read_bytes()


@pytest.mark.parametrize("values", ["0.01,0.1", "0.1,-1", ""])
def test_sweep_rejects_bad_values(tmp_path, values):
    assert main(["sweep", "--out", str(tmp_path), "--axis", "delta", "--values", values]) == 2


def test_check_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 6 and all(line.startswith("PASS") for line in out)


def test_check_detects_perturbed_gradient(capsys):
    assert main(["check", "--perturb-gradient"]) == 1
    assert "FAIL gradient" in capsys.readouterr().out

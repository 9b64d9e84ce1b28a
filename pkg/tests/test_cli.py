import json
import shutil
import subprocess
import sys

import pytest

import stacklq as sq
from stacklq.cli import main


@pytest.fixture(scope="module")
def spec_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("specs")
    spec = sq.make_spec(n=1, T=1.0, steps=150, x0=1.0,
                        A=0.3, B1=1.0, B2=0.8, B3=0.6,
                        b=0.05, sigma1=0.25, sigma2=0.3, sigma3=0.35,
                        Q1=1.0, R1=1.0, G1=0.5, m1=0.02, n1=0.01,
                        Q2=0.8, R2=1.2, G2=0.4, n2=0.02,
                        Q3=0.6, R3=1.5, G3=0.3, m3=0.01)
    path = d / "game.json"
    sq.save_spec(spec, path)
    return path


@pytest.fixture(scope="module")
def zero_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("specs0")
    path = d / "zero.json"
    sq.save_spec(sq.make_spec(n=1, T=1.0, steps=80, x0=0.0), path)
    return path


def test_validate_ok(zero_file, tmp_path):
    rc = main(["validate", "--spec", str(zero_file), "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "validation.txt").read_text().strip() == "spec valid"


def test_validate_bad_weight(tmp_path):
    spec = sq.make_spec(n=1, R2=-1.0)
    p = tmp_path / "bad.json"
    sq.save_spec(spec, p)
    rc = main(["validate", "--spec", str(p), "--out", str(tmp_path)])
    assert rc == 1
    assert "R2" in (tmp_path / "validation.txt").read_text()


def test_parse_error_exit_2(tmp_path):
    p = tmp_path / "garbled.json"
    p.write_text("{ definitely not json !!")
    rc = main(["validate", "--spec", str(p), "--out", str(tmp_path)])
    assert rc == 2


def test_solve_zero_spec_all_zero_csv(zero_file, tmp_path):
    rc = main(["solve", "--spec", str(zero_file), "--out", str(tmp_path)])
    assert rc == 0
    for name in ("p", "P1", "P2", "Pf1", "Pf2", "Pf3", "Omega"):
        rows = (tmp_path / f"{name}.csv").read_text().strip().splitlines()[1:]
        vals = {float(r.split(",")[-1]) for r in rows}
        assert vals == {0.0}, name


def test_solve_closed_form_value(tmp_path):
    spec = sq.make_spec(n=1, T=1.0, steps=1000, B1=1.0, R1=1.0, G1=1.0)
    p = tmp_path / "cf.json"
    sq.save_spec(spec, p)
    rc = main(["solve", "--spec", str(p), "--out", str(tmp_path)])
    assert rc == 0
    first = (tmp_path / "p.csv").read_text().splitlines()[1]
    t, _, _, value = first.split(",")
    assert float(t) == 0.0
    assert abs(float(value) - 0.5) <= 1e-8


def test_gains_cover_every_node(spec_file, tmp_path):
    rc = main(["solve", "--spec", str(spec_file), "--out", str(tmp_path)])
    assert rc == 0
    rows = (tmp_path / "gains.csv").read_text().strip().splitlines()[1:]
    ts = {r.split(",")[0] for r in rows}
    assert len(ts) == 151


def test_simulate_zero_cost_and_deterministic_stderr(zero_file, tmp_path):
    rc = main(["simulate", "--spec", str(zero_file), "--out", str(tmp_path),
               "--paths", "8"])
    assert rc == 0
    rows = (tmp_path / "costs.csv").read_text().strip().splitlines()[1:]
    for r in rows:
        _, mean, stderr, *_ = r.split(",")
        assert float(mean) == 0.0
        assert float(stderr) == 0.0


def test_simulate_no_noise_zero_stderr(tmp_path):
    spec = sq.make_spec(n=1, T=1.0, steps=60, x0=1.0, A=0.2, B1=1.0,
                        Q1=0.5, G1=0.5, Q2=0.4, Q3=0.3)
    p = tmp_path / "det.json"
    sq.save_spec(spec, p)
    rc = main(["simulate", "--spec", str(p), "--out", str(tmp_path / "o"),
               "--paths", "6"])
    assert rc == 0
    rows = (tmp_path / "o" / "costs.csv").read_text().strip().splitlines()[1:]
    for r in rows:
        assert float(r.split(",")[2]) == 0.0


def test_simulate_rerun_bit_identical(spec_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, threads in ((a, "1"), (b, "4")):
        rc = main(["simulate", "--spec", str(spec_file), "--out", str(out),
                   "--paths", "32", "--seed", "7", "--threads", threads])
        assert rc == 0
    for name in ("paths.csv", "costs.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_verify_passes_and_sabotage_fails(spec_file, tmp_path):
    rc = main(["verify", "--spec", str(spec_file), "--out", str(tmp_path / "v"),
               "--paths", "1500", "--seed", "1"])
    assert rc == 0
    report = json.loads((tmp_path / "v" / "verify_report.json").read_text())
    assert all(c["passed"] for c in report)
    ids = {c["id"] for c in report}
    assert {"terminal_conditions", "residual_order", "filter_measurability",
            "tower_oracle", "variational_p1", "variational_p2",
            "variational_p3"} <= ids
    # reducible specs additionally route through the DP crosscheck
    assert "dp_crosscheck" not in ids

    rc = main(["verify", "--spec", str(spec_file), "--out", str(tmp_path / "s"),
               "--paths", "1500", "--seed", "1", "--sabotage-gains", "1.5"])
    assert rc == 4
    report = json.loads((tmp_path / "s" / "verify_report.json").read_text())
    failed = {c["id"] for c in report if not c["passed"]}
    assert "variational_p1" in failed


def test_verify_reducible_includes_dp(tmp_path, reducible_spec):
    p = tmp_path / "red.json"
    sq.save_spec(reducible_spec, p)
    rc = main(["verify", "--spec", str(p), "--out", str(tmp_path / "v"),
               "--paths", "1000", "--seed", "5"])
    report = json.loads((tmp_path / "v" / "verify_report.json").read_text())
    assert "dp_crosscheck" in {c["id"] for c in report}
    assert rc == 0


def test_console_entry_point(zero_file, tmp_path):
    exe = shutil.which("stacklq")
    cmd = ([exe] if exe else [sys.executable, "-m", "stacklq.cli"])
    proc = subprocess.run(cmd + ["validate", "--spec", str(zero_file),
                                 "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "spec valid" in proc.stdout

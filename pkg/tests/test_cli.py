import csv
import io
import json
import math
import subprocess
import sys
from decimal import Decimal
from pathlib import Path

import jsonschema
import pytest
from hypothesis import given, strategies as st

from magshell import cli

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def schema(name):
    return json.loads((SCHEMAS / f"{name}.v1.json").read_text())


def run(capsysbinary, *argv):
    code = cli.dispatch(list(argv))
    out, err = capsysbinary.readouterr()
    return code, out, err.decode()


def test_orbits_json(capsysbinary):
    code, out, _ = run(capsysbinary, "orbits", "--system", "heisenberg", "--energy", "0.375", "--format", "json")
    assert code == 0
    recs = json.loads(out)
    jsonschema.validate(recs, schema("orbit_record"))
    assert recs[0]["omega"] == pytest.approx(math.pi, abs=1e-4)


def test_unknown_system(capsysbinary):
    code, _, err = run(capsysbinary, "orbits", "--system", "nosuch")
    assert code == 2 and "nosuch" in err


@pytest.mark.parametrize("argv", [["orbits", "--system", "heisenberg"], ["nosuch"], ["sweep", "--system", "psl2"],
                                  ["orbits", "--system", "heisenberg", "--energy", "-1"],
                                  ["sweep", "--system", "heisenberg", "--what", "entropy", "--k-min", "0.1",
                                   "--k-max", "0.2", "--steps", "2"]])
def test_usage_errors(capsysbinary, argv):
    assert run(capsysbinary, *argv)[0] == 2


def test_precondition_is_a_usage_error(capsysbinary):
    code, _, err = run(capsysbinary, "displace", "--system", "psl2", "--energy", "0.3")
    assert code == 2 and "1/4" in err


def test_unstable_level_is_a_verification_failure(capsysbinary):
    code, _, err = run(capsysbinary, "stability", "--system", "psl2", "--energy", "0.25")
    assert code == 3 and "not stable" in err


@pytest.mark.parametrize("cmd", ["flow", "orbits", "mane", "stability", "contact", "lyapunov", "displace",
                                 "rabinowitz", "sweep"])
def test_selftests(capsysbinary, cmd):
    code, out, _ = run(capsysbinary, cmd, "--selftest")
    assert code == 0
    lines = out.decode().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_entropy_sweep_flips_once(capsysbinary):
    code, out, _ = run(capsysbinary, "sweep", "--system", "psl2", "--what", "entropy", "--k-min", "0.05",
                       "--k-max", "0.5", "--steps", "90", "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.decode())))
    assert len(rows) == 91
    flags = [r["no_hyperbolic"] == "true" for r in rows]
    flips = [i for i in range(1, len(flags)) if flags[i] != flags[i - 1]]
    assert len(flips) == 1
    i = flips[0]
    assert float(rows[i - 1]["k"]) == 0.25 and float(rows[i]["k"]) == 0.255


def test_orbit_sweep_is_monotone(capsysbinary):
    code, out, _ = run(capsysbinary, "sweep", "--system", "heisenberg", "--what", "orbits", "--k-min", "0.05",
                       "--k-max", "0.45", "--steps", "8", "--format", "csv")
    omega = [float(r["omega"]) for r in csv.DictReader(io.StringIO(out.decode()))]
    assert code == 0 and len(omega) == 9
    assert all(b > a for a, b in zip(omega, omega[1:]))


def test_empty_csv_is_header_only():
    assert cli.emit([], "csv", cli.ORBIT_COLUMNS) == (",".join(cli.ORBIT_COLUMNS) + "\n").encode()
    assert cli.emit([], "json") == b"[]\n"


def test_empty_orbit_list(capsysbinary):
    code, out, _ = run(capsysbinary, "orbits", "--system", "psl2", "--energy", "0.3", "--format", "csv")
    assert code == 0 and out.decode() == ",".join(cli.ORBIT_COLUMNS) + "\n"


def test_byte_stable_and_thread_independent(capsysbinary, monkeypatch):
    argv = ["sweep", "--system", "heisenberg", "--what", "contact", "--k-min", "0.1", "--k-max", "1",
            "--steps", "30", "--format", "json"]
    monkeypatch.setenv("MAGSHELL_THREADS", "1")
    a = run(capsysbinary, *argv)[1]
    monkeypatch.setenv("MAGSHELL_THREADS", "4")
    b = run(capsysbinary, *argv)[1]
    c = run(capsysbinary, *argv)[1]
    assert a == b == c


def test_flow_seed_determinism(capsysbinary):
    argv = ["flow", "--system", "sol", "--energy", "0.5", "--t-max", "1", "--dt", "0.01", "--seed", "7",
            "--format", "csv"]
    a, b = run(capsysbinary, *argv)[1], run(capsysbinary, *argv)[1]
    assert a == b
    other = run(capsysbinary, *argv[:-3], "--seed", "8", "--format", "csv")[1]
    assert other != a


def test_mane_estimate_schema(capsysbinary):
    code, out, _ = run(capsysbinary, "mane", "--system", "psl2", "--method", "circle-family", "--tol", "1e-3",
                       "--format", "json")
    assert code == 0
    data = json.loads(out)
    jsonschema.validate(data, schema("mane_estimate"))
    assert json.loads(json.dumps(data)) == data
    assert 0.249 <= data["c_lower"] <= data["c_upper"] <= 0.251


def test_mane_primitive_method(capsysbinary):
    code, out, _ = run(capsysbinary, "mane", "--system", "psl2", "--method", "primitive", "--form", "delta_psl2")
    assert code == 0 and json.loads(out)[0]["upper_bound"] == pytest.approx(0.25)


def test_stability_schema(capsysbinary):
    code, out, _ = run(capsysbinary, "stability", "--system", "heisenberg", "--energy", "0.3", "--grid", "64")
    assert code == 0
    jsonschema.validate(json.loads(out), schema("stability_report"))


def test_rabinowitz_schema(capsysbinary):
    code, out, _ = run(capsysbinary, "rabinowitz", "--system", "torus", "--dim", "2", "--energy", "0.5",
                       "--points", "32", "--seeds", "2")
    assert code == 0
    rows = json.loads(out)
    jsonschema.validate(rows, schema("critical_point"))
    assert [r["eta"] for r in rows] == pytest.approx([2 * math.pi, -2 * math.pi], abs=1e-6)


def test_out_file(capsysbinary, tmp_path):
    target = tmp_path / "c.csv"
    code, out, _ = run(capsysbinary, "contact", "--system", "psl2", "--energy", "0.6", "--format", "csv",
                       "--out", str(target))
    assert code == 0 and out == b""
    row = next(csv.DictReader(target.open()))
    assert float(row["margin"]) == pytest.approx(1.2 - math.sqrt(1.2), abs=1e-12)


def test_run_config(capsysbinary, tmp_path):
    cfg = {"command": "contact", "system": "heisenberg", "energy": "0.6", "format": "csv"}
    jsonschema.validate(cfg, schema("run_config"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsysbinary, "run", str(path))
    direct = run(capsysbinary, "contact", "--system", "heisenberg", "--energy", "0.6", "--format", "csv")[1]
    assert code == 0 and out == direct


def test_run_config_grid(capsysbinary, tmp_path):
    cfg = {"command": "sweep", "system": "psl2", "energy_grid": {"k_min": "0.2", "k_max": "0.3", "steps": 4},
           "params": {"what": "entropy"}, "format": "csv"}
    jsonschema.validate(cfg, schema("run_config"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsysbinary, "run", str(path))
    assert code == 0 and len(out.decode().splitlines()) == 6


@pytest.mark.parametrize("cfg", [
    {"command": "contact", "system": "psl2", "energy": 0.6, "bogus": 1},
    {"command": "contact", "system": "psl2", "energy": 0.6, "energy_grid": {"k_min": 0.1, "k_max": 1, "steps": 2}},
    {"command": "contact"},
    {"command": "contact", "system": "psl2", "seed": "x"},
])
def test_bad_run_configs(capsysbinary, tmp_path, cfg):
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(cfg, schema("run_config"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert run(capsysbinary, "run", str(path))[0] == 2


@given(st.decimals("0.001", "1", places=3), st.decimals("0.001", "1", places=3), st.integers(1, 200))
def test_energy_grid(a, b, steps):
    lo, hi = min(a, b), max(a, b)
    if lo == hi:
        return
    grid = cli.energy_grid(str(lo), str(hi), steps)
    assert len(grid) == steps + 1
    assert grid[0] == float(lo) and grid[-1] == float(hi)
    h = (hi - lo) / steps
    assert grid == [float(lo + i * h) for i in range(steps + 1)]
    assert all(y > x for x, y in zip(grid, grid[1:]))


def test_grid_hits_quarter():
    assert Decimal("0.25") in [Decimal(repr(k)) for k in cli.energy_grid("0.05", "0.5", 90)]


def test_lyapunov_command(capsysbinary):
    code, out, _ = run(capsysbinary, "lyapunov", "--system", "heisenberg", "--energy", "0.5", "--casimir", "-0.5",
                       "--t-max", "20")
    assert code == 0 and abs(json.loads(out)[0]["exponent"]) < 0.1
    code, _, _ = run(capsysbinary, "lyapunov", "--system", "heisenberg", "--energy", "0.1", "--casimir", "-2")
    assert code == 2


@pytest.mark.parametrize("prefix", [["magshell"], [sys.executable, "-m", "magshell"]])
def test_entry_points(prefix):
    proc = subprocess.run([*prefix, "contact", "--system", "psl2", "--energy", "0.5", "--format", "csv"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[1].startswith("psl2,0.5,boundary,0.0")
    assert subprocess.run([*prefix, "orbits", "--system", "nosuch"], capture_output=True).returncode == 2

import csv
import json
import math

import numpy as np
import pytest

from fabloop.cli import main
from fabloop.pgm import read_pgm, write_pgm
from fabloop.simulation import DEFAULT_CAMERA_CORNERS, Scenario, capture, deposit_layer, VirtualBed


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("FABLOOP_SEED", raising=False)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_fk(capsys):
    code, out, _ = run(capsys, "fk", 0, 0, 0, 0, 0)
    assert code == 0
    assert json.loads(out)["position_mm"] == pytest.approx([600.0, 0.0, 36.0], abs=1e-9)


def test_ik_then_fk(capsys):
    code, out, _ = run(capsys, "ik", 400, 50, 20, "--elbow", "down")
    assert code == 0
    joints = json.loads(out)["joints_rad"]
    _, out, _ = run(capsys, "fk", *joints)
    assert json.loads(out)["position_mm"] == pytest.approx([400, 50, 20], abs=1e-9)


def test_ik_out_of_reach_is_runtime_error(capsys):
    code, _, err = run(capsys, "ik", 5000, 0, 0)
    assert code == 3 and "error" in err


def test_calibrate(tmp_path, capsys):
    q = tmp_path / "quad.json"
    q.write_text(json.dumps([list(c) for c in DEFAULT_CAMERA_CORNERS]))
    out_file = tmp_path / "h.json"
    assert run(capsys, "calibrate", q, "-o", out_file)[0] == 0
    h = np.array(json.loads(out_file.read_text())["homography"])
    u, v = DEFAULT_CAMERA_CORNERS[2]
    p = h @ [u, v, 1.0]
    assert p[:2] / p[2] == pytest.approx([399, 399], abs=1e-9)


def test_calibrate_bad_quad(tmp_path, capsys):
    q = tmp_path / "quad.json"
    q.write_text("[[0, 0], [1, 1]]")
    assert run(capsys, "calibrate", q)[0] == 2
    q.write_text("[[0, 0], [1, 1], [2, 2], [3, 3]]")  # well-formed but collinear
    assert run(capsys, "calibrate", q)[0] == 3


def test_detect_on_capture(tmp_path, capsys):
    s = Scenario()
    bed = deposit_layer(VirtualBed.empty(s.bed_span, s.bed_resolution, s.layer_z), s.sample, s.defects)
    img = tmp_path / "raw.pgm"
    write_pgm(img, capture(bed, s.camera))
    overlay = tmp_path / "ov.pgm"
    code, out, _ = run(capsys, "detect", img, "--overlay", overlay)
    assert code == 0
    regions = json.loads(out)
    assert len(regions) == 49
    assert read_pgm(overlay).shape == (400, 400)


def test_detect_missing_image(tmp_path, capsys):
    assert run(capsys, "detect", tmp_path / "none.pgm")[0] == 3


def test_thermal_csv(tmp_path, capsys):
    out_file = tmp_path / "t.csv"
    assert run(capsys, "thermal", "--duration", 2, "-o", out_file)[0] == 0
    rows = list(csv.DictReader(out_file.open()))
    assert len(rows) == 201
    assert float(rows[0]["temp_c"]) == 25.0 and rows[1]["heater_on"] == "1"


def test_simulate_with_dump(tmp_path, capsys):
    dump = tmp_path / "dump"
    code, out, _ = run(capsys, "simulate", "--dump-dir", dump)
    assert code == 0
    report = json.loads(out)
    assert (report["detected"], report["repaired"], report["residual_after_verify"]) == (49, 49, 0)
    names = {p.stem for p in dump.iterdir()}
    assert {"detect_raw", "detect_rectified", "detect_mask", "detect_overlay", "verify_raw"} <= names


def test_simulate_output_keys_sorted(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate")
    assert code == 0
    assert list(json.loads(out)) == sorted(json.loads(out))


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"arm": {"a2_mm": -1}}')
    code, _, err = run(capsys, "simulate", "-c", bad)
    assert code == 2 and "arm.a2_mm" in err
    bad.write_text("{nope")
    assert run(capsys, "fk", 0, 0, 0, 0, 0, "-c", bad)[0] == 2


def test_thermal_timeout_exit_code(tmp_path, capsys):
    cfg = tmp_path / "weak.json"
    cfg.write_text(json.dumps({"thermal": {"timeout_s": 30, "plant": {"power_w": 5}}}))
    code, _, err = run(capsys, "simulate", "-c", cfg)
    assert code == 3 and "error" in err


def test_serve_port(capsys):
    # port 0 asks the OS for a free one
    assert run(capsys, "simulate", "--serve", 0)[0] == 0

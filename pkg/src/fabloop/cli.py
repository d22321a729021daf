"""Command-line entry point: ``fabloop <verb> ...``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import errors
from .config import ScenarioConfig, load_config, parse_config
from .defect_detection import detect_with_artifacts, draw_overlay
from .kinematics import Elbow, IkRequest, JointAngles, forward_kinematics, inverse_kinematics
from .pgm import PGMError, read_pgm, write_pgm
from .simulation import run_layer_cycle
from .telemetry import Telemetry, TelemetryServer
from .thermal_extrusion import Hotend, ThermalSample
from .vision_geometry import CalibrationQuad, Homography, estimate_homography

log = logging.getLogger("fabloop")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _config(path) -> ScenarioConfig:
    return load_config(path) if path else parse_config({})


def _emit(payload, out):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_json(path, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise errors.ParseError(f"cannot read {what} {path}: {exc}") from None


def _read_quad(path, size: int) -> CalibrationQuad:
    pts = _read_json(path, "quad")
    if isinstance(pts, dict):
        pts = pts.get("corners_px")
    if not (isinstance(pts, list) and len(pts) == 4 and all(isinstance(p, list) and len(p) == 2 for p in pts)):
        raise errors.ValidationError("quad file must hold four [u, v] pairs", str(path))
    try:
        return CalibrationQuad.to_square([tuple(map(float, p)) for p in pts], size)
    except (TypeError, ValueError) as exc:
        raise errors.ValidationError(str(exc), str(path)) from None


def cmd_fk(args) -> int:
    cfg = _config(args.config)
    pose = forward_kinematics(JointAngles(*args.theta), cfg.arm.geometry())
    _emit({"position_mm": pose.position.tolist(), "rotation": pose.rotation.tolist()}, args.output)
    return EXIT_OK


def cmd_ik(args) -> int:
    cfg = _config(args.config)
    pitch = cfg.arm.pitch_rad if args.pitch is None else args.pitch
    elbow = Elbow(args.elbow or cfg.arm.elbow)
    joints = inverse_kinematics(IkRequest(tuple(args.target), pitch, elbow), cfg.arm.geometry())
    _emit({"elbow": elbow.value, "joints_rad": list(joints.as_tuple()), "pitch_rad": pitch}, args.output)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    quad = _read_quad(args.quad, args.size)
    h = estimate_homography(quad)
    _emit({"homography": h.tolist(), "size_px": args.size}, args.output)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args.config)
    scenario = cfg.to_scenario()
    mapping = scenario.mapping
    if args.homography:
        data = _read_json(args.homography, "homography")
        h = Homography(data["homography"] if isinstance(data, dict) else data)
    elif args.quad:
        h = estimate_homography(_read_quad(args.quad, mapping.frame_size))
    else:
        corners = scenario.calibration_corners or scenario.camera.raw_corners(mapping.frame_size)
        h = estimate_homography(CalibrationQuad.to_square(corners, mapping.frame_size))
    art = detect_with_artifacts(read_pgm(args.image), h, mapping, scenario.detect)
    if args.overlay:
        write_pgm(args.overlay, draw_overlay(art.rectified, art.regions))
    _emit([r.to_dict() for r in art.regions], args.output)
    return EXIT_OK


def cmd_thermal(args) -> int:
    cfg = _config(args.config)
    th = cfg.thermal
    duration = th.duration_s if args.duration is None else args.duration
    hotend = Hotend(th.hysteresis(), th.plant_model(), th.dt_s, th.sensor())
    rows = [ThermalSample(0.0, hotend.plant.temperature, False)]
    for _ in range(int(round(duration / th.dt_s))):
        rows.append(hotend.step())
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["time_s", "temp_c", "heater_on"])
        for s in rows:
            writer.writerow([f"{s.time:.6f}", repr(s.temp), int(s.heater_on)])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    scenario = cfg.to_scenario()
    telemetry = Telemetry()
    server = None
    if args.serve is not None:
        server = TelemetryServer(telemetry, args.host, args.serve).start()
        log.info("telemetry on %s/status", server.url)
    images = {} if args.dump_dir else None
    try:
        report = run_layer_cycle(scenario, telemetry, images)
        if args.dump_dir:
            out = Path(args.dump_dir)
            out.mkdir(parents=True, exist_ok=True)
            for name, img in sorted(images.items()):
                write_pgm(out / f"{name}.pgm", img)
        _emit(report.to_dict(), args.output)
        if server is not None and args.linger > 0:
            time.sleep(args.linger)
    finally:
        if server is not None:
            server.stop()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fabloop", description="Closed-loop robotic FDM defect repair simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("-c", "--config", help="scenario JSON (defaults if omitted)")
        sp.add_argument("-o", "--output", help="write output here instead of stdout")

    sp = sub.add_parser("fk", help="forward kinematics")
    sp.add_argument("theta", nargs=5, type=float, metavar="THETA", help="joint angles 1..5 in radians")
    common(sp)
    sp.set_defaults(func=cmd_fk)

    sp = sub.add_parser("ik", help="inverse kinematics")
    sp.add_argument("target", nargs=3, type=float, metavar=("X", "Y", "Z"), help="nozzle target in mm")
    sp.add_argument("--pitch", type=float, help="theta2+theta3+theta4 in radians")
    sp.add_argument("--elbow", choices=[e.value for e in Elbow])
    common(sp)
    sp.set_defaults(func=cmd_ik)

    sp = sub.add_parser("calibrate", help="homography from four raw corners")
    sp.add_argument("quad", help="JSON array of four [u, v] raw corners, TL TR BR BL")
    sp.add_argument("--size", type=int, default=400, help="rectified frame size in px")
    common(sp, config=False)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("detect", help="detect defects in a raw PGM capture")
    sp.add_argument("image")
    sp.add_argument("--quad", help="calibration quad JSON")
    sp.add_argument("--homography", help="homography JSON from `calibrate`")
    sp.add_argument("--overlay", help="write rectified image with boxes burned in")
    common(sp)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("thermal", help="bang-bang hotend trace as CSV")
    sp.add_argument("--duration", type=float, help="seconds (default: thermal.duration_s)")
    common(sp)
    sp.set_defaults(func=cmd_thermal)

    sp = sub.add_parser("simulate", help="run one closed-loop layer cycle")
    sp.add_argument("--dump-dir", help="write raw/rectified/mask/overlay PGMs here")
    sp.add_argument("--serve", type=int, metavar="PORT", help="serve /status and /healthz on PORT")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--linger", type=float, default=0.0, help="keep serving this many seconds after the run")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except errors.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (errors.FabloopError, PGMError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

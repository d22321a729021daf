"""Virtual bed and camera plus the closed-loop layer cycle:
deposit, heat, capture, detect, repair each defect, recapture and verify.

Bed coordinates are millimetres with the origin at the top-left corner of
the camera ROI, x along image u and y along image v.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .defect_detection import DefectRegion, DetectConfig, detect_with_artifacts, draw_overlay
from .errors import OutOfBed, OutOfReach, Singular, ThermalTimeout
from .kinematics import ArmGeometry, Elbow, IkRequest, JointAngles, forward_kinematics, inverse_kinematics
from .telemetry import Phase, Telemetry
from .thermal_extrusion import (
    DEFAULT_STEINHART_HART,
    DividerConfig,
    ExtrusionConfig,
    Hotend,
    HysteresisConfig,
    Sensor,
    ThermalPlant,
    extrusion_rate,
)
from .vision_geometry import (
    BedMapping,
    BedPoint,
    CalibrationQuad,
    Homography,
    estimate_homography,
    rectify,
)

log = logging.getLogger(__name__)

MATERIAL_INTENSITY = 200
VOID_INTENSITY = 40


class Rect(NamedTuple):
    x: float
    y: float
    width: float
    height: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (
            self.x + margin <= x <= self.x + self.width - margin
            and self.y + margin <= y <= self.y + self.height - margin
        )


@dataclass
class VirtualBed:
    """Ground-truth occupancy of the current layer.

    ``occupancy[i, j]`` covers the cell whose centre is at
    ``((j + 0.5) * resolution, (i + 0.5) * resolution)`` mm.
    """

    span: tuple[float, float]
    resolution: float
    occupancy: np.ndarray
    layer_z: float = 0.0

    def __post_init__(self):
        nx, ny = (s / self.resolution for s in self.span)
        if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
            raise ValueError("span must be a whole number of cells")
        if self.occupancy.shape != (round(ny), round(nx)):
            raise ValueError("occupancy shape does not match span / resolution")
        if self.layer_z < 0:
            raise ValueError("layer_z must be >= 0")

    @classmethod
    def empty(cls, span=(201.0, 201.0), resolution: float = 0.1, layer_z: float = 0.2) -> "VirtualBed":
        nx, ny = (round(s / resolution) for s in span)
        return cls(tuple(float(s) for s in span), resolution, np.zeros((ny, nx), dtype=bool), layer_z)

    def copy(self) -> "VirtualBed":
        return VirtualBed(self.span, self.resolution, self.occupancy.copy(), self.layer_z)

    def cell_centers(self, i0: int, i1: int, j0: int, j1: int):
        ys = (np.arange(i0, i1) + 0.5) * self.resolution
        xs = (np.arange(j0, j1) + 0.5) * self.resolution
        return xs[np.newaxis, :], ys[:, np.newaxis]

    def disc_window(self, cx: float, cy: float, radius: float):
        """Index bounds of the cells that may have centres within ``radius``."""
        ny, nx = self.occupancy.shape
        res = self.resolution
        j0 = max(int(math.floor((cx - radius) / res)), 0)
        j1 = min(int(math.ceil((cx + radius) / res)) + 1, nx)
        i0 = max(int(math.floor((cy - radius) / res)), 0)
        i1 = min(int(math.ceil((cy + radius) / res)) + 1, ny)
        return i0, i1, j0, j1

    def disc_mask(self, cx: float, cy: float, radius: float):
        i0, i1, j0, j1 = self.disc_window(cx, cy, radius)
        xs, ys = self.cell_centers(i0, i1, j0, j1)
        inside = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
        return (slice(i0, i1), slice(j0, j1)), inside


@dataclass(frozen=True)
class DefectSpec:
    centers: tuple[BedPoint, ...] = ()
    diameter: float = 2.0

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("defect diameter must be > 0")
        object.__setattr__(self, "centers", tuple(BedPoint(float(x), float(y)) for x, y in self.centers))


def grid_centers(region: Rect, rows: int, cols: int) -> list[BedPoint]:
    """Centres of a rows x cols grid of equal cells tiling ``region``."""
    dx, dy = region.width / cols, region.height / rows
    return [
        BedPoint(region.x + (c + 0.5) * dx, region.y + (r + 0.5) * dy)
        for c in range(cols)
        for r in range(rows)
    ]


def random_centers(rng: np.random.Generator, count: int, region: Rect, diameter: float, gap: float,
                   max_tries: int = 100_000) -> list[BedPoint]:
    """Uniform non-overlapping disc centres; discs keep ``gap`` mm clear of
    each other and of the region edge."""
    edge = diameter / 2.0 + gap
    min_sep = diameter + gap
    centers: list[BedPoint] = []
    for _ in range(max_tries):
        if len(centers) == count:
            break
        x = rng.uniform(region.x + edge, region.x + region.width - edge)
        y = rng.uniform(region.y + edge, region.y + region.height - edge)
        if all(math.hypot(x - cx, y - cy) >= min_sep for cx, cy in centers):
            centers.append(BedPoint(float(x), float(y)))
    else:
        raise ValueError(f"could not place {count} defects in {region}")
    return centers


def deposit_layer(bed: VirtualBed, region: Rect, defects: DefectSpec = DefectSpec()) -> VirtualBed:
    """Fill ``region`` with material, then clear each defect disc."""
    eps = 1e-9
    if region.x < -eps or region.y < -eps or region.x + region.width > bed.span[0] + eps \
            or region.y + region.height > bed.span[1] + eps:
        raise OutOfBed(f"region {region} exceeds bed span {bed.span}")
    out = bed.copy()
    ny, nx = out.occupancy.shape
    xs, ys = out.cell_centers(0, ny, 0, nx)
    inside = (
        (xs >= region.x) & (xs <= region.x + region.width)
        & (ys >= region.y) & (ys <= region.y + region.height)
    )
    out.occupancy |= inside
    radius = defects.diameter / 2.0
    for cx, cy in defects.centers:
        window, disc = out.disc_mask(cx, cy, radius)
        out.occupancy[window] &= ~disc
    return out


@dataclass(frozen=True)
class CameraModel:
    """Virtual overhead camera.

    ``warp`` maps rectified-frame pixels to raw-image pixels (the mounting
    distortion the calibration has to undo).
    """

    warp: Homography
    raw_size: tuple[int, int] = (640, 480)
    noise_sigma: float = 2.0
    seed: int = 0
    material_intensity: int = MATERIAL_INTENSITY
    void_intensity: int = VOID_INTENSITY

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def from_corners(cls, corners: Sequence, frame_size: int = 400, **kw) -> "CameraModel":
        """Camera whose rectified-frame corners (TL, TR, BR, BL) land on ``corners``."""
        edge = float(frame_size - 1)
        square = [(0.0, 0.0), (edge, 0.0), (edge, edge), (0.0, edge)]
        return cls(warp=estimate_homography(CalibrationQuad(tuple(square), tuple(corners))), **kw)

    def raw_corners(self, frame_size: int = 400) -> list[tuple[float, float]]:
        edge = float(frame_size - 1)
        return [tuple(map(float, self.warp((u, v)))) for u, v in [(0, 0), (edge, 0), (edge, edge), (0, edge)]]


DEFAULT_CAMERA_CORNERS = ((118.0, 38.0), (522.0, 52.0), (548.0, 446.0), (92.0, 432.0))


def render_ideal(bed: VirtualBed, mapping: BedMapping = BedMapping(),
                 material: int = MATERIAL_INTENSITY, void: int = VOID_INTENSITY) -> np.ndarray:
    """Top-down rectified-frame image, sampling the bed cell under each pixel centre."""
    n = mapping.frame_size
    coords = np.arange(n, dtype=float)
    x = (coords - mapping.roi_origin.u) * mapping.mm_per_pixel
    y = (coords - mapping.roi_origin.v) * mapping.mm_per_pixel
    ny, nx = bed.occupancy.shape
    j = np.floor(x / bed.resolution).astype(np.intp)
    i = np.floor(y / bed.resolution).astype(np.intp)
    jv = (j >= 0) & (j < nx)
    iv = (i >= 0) & (i < ny)
    occupied = bed.occupancy[np.clip(i, 0, ny - 1)][:, np.clip(j, 0, nx - 1)]
    occupied &= iv[:, np.newaxis] & jv[np.newaxis, :]
    return np.where(occupied, material, void).astype(np.uint8)


def capture(bed: VirtualBed, cam: CameraModel, mapping: BedMapping = BedMapping(), frame: int = 0) -> np.ndarray:
    """Raw camera image of ``bed``; deterministic in (cam.seed, frame)."""
    ideal = render_ideal(bed, mapping, cam.material_intensity, cam.void_intensity)
    raw = rectify(ideal, cam.warp, cam.raw_size, background=cam.void_intensity)
    if cam.noise_sigma == 0:
        return raw
    rng = np.random.default_rng([cam.seed, frame])
    noisy = raw.astype(float) + rng.normal(0.0, cam.noise_sigma, raw.shape)
    return np.clip(np.floor(noisy + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Registration:
    """Rigid placement of the bed frame in the arm base frame."""

    x: float = 200.0
    y: float = -100.5
    z: float = 0.0
    yaw: float = 0.0

    def to_arm(self, p: BedPoint, z: float) -> tuple[float, float, float]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return (self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1], self.z + z)

    def to_bed(self, arm_xyz) -> tuple[float, float, float]:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx, dy = arm_xyz[0] - self.x, arm_xyz[1] - self.y
        return (c * dx + s * dy, -s * dx + c * dy, arm_xyz[2] - self.z)


@dataclass(frozen=True)
class RepairAction:
    target: DefectRegion
    joints: JointAngles
    fill_volume: float  # mm^3
    dwell: float  # s
    margin: float = 0.1  # mm of overfill beyond the equivalent radius


def plan_repair(
    d: DefectRegion,
    bed: VirtualBed,
    geom: ArmGeometry,
    e: ExtrusionConfig,
    mapping: BedMapping = BedMapping(),
    registration: Registration = Registration(),
    repair_speed: float = 10.0,
    pitch: float = 0.0,
    elbow: Elbow = Elbow.UP,
    margin: Optional[float] = None,
) -> RepairAction:
    """IK solution and material budget for filling one detected void.

    ``margin`` defaults to one bed cell.
    """
    target = registration.to_arm(d.centroid_mm, bed.layer_z)
    joints = inverse_kinematics(IkRequest(target, pitch, elbow), geom)
    fill_volume = d.area_px * mapping.mm_per_pixel ** 2 * e.layer_height
    flow = repair_speed * e.road_width * e.layer_height
    return RepairAction(
        target=d,
        joints=joints,
        fill_volume=fill_volume,
        dwell=fill_volume / flow,
        margin=bed.resolution if margin is None else margin,
    )


def execute_repair(bed: VirtualBed, a: RepairAction) -> VirtualBed:
    out = bed.copy()
    radius = a.target.equivalent_diameter_mm / 2.0 + a.margin
    window, disc = out.disc_mask(a.target.centroid_mm.x, a.target.centroid_mm.y, radius)
    out.occupancy[window] |= disc
    return out


@dataclass(frozen=True)
class Scenario:
    geom: ArmGeometry = ArmGeometry(126.0, 300.0, 300.0, 90.0)
    pitch: float = 0.0
    elbow: Elbow = Elbow.UP
    registration: Registration = Registration()
    bed_span: tuple[float, float] = (201.0, 201.0)
    bed_resolution: float = 0.1
    layer_z: float = 0.2
    sample: Rect = Rect(50.5, 50.5, 100.0, 100.0)
    defects: DefectSpec = DefectSpec(tuple(grid_centers(Rect(50.5, 50.5, 100.0, 100.0), 7, 7)), 2.0)
    camera: CameraModel = field(default_factory=lambda: CameraModel.from_corners(DEFAULT_CAMERA_CORNERS))
    mapping: BedMapping = BedMapping()
    calibration_corners: Optional[tuple] = None  # raw corners; None = camera ground truth
    detect: DetectConfig = DetectConfig()
    hysteresis: HysteresisConfig = HysteresisConfig()
    plant: ThermalPlant = ThermalPlant()
    sensor: Optional[Sensor] = Sensor(DividerConfig(), DEFAULT_STEINHART_HART)
    dt: float = 0.01
    thermal_timeout: float = 600.0
    extrusion: ExtrusionConfig = ExtrusionConfig()
    repair_speed: float = 10.0
    repair_margin: Optional[float] = None
    verify_each: bool = False
    throttle: float = 0.0  # wall-clock seconds slept after each telemetry update


@dataclass
class CycleReport:
    layer: int
    detected: int
    repaired: int
    residual_after_verify: int
    centroid_errors_mm: list[float]
    ground_truth_bijection: bool
    unreachable: list[list[float]]
    repair_order_mm: list[list[float]]
    heat_up_time_s: float
    sim_time_s: float
    per_repair_residual: Optional[list[int]] = None

    def __post_init__(self):
        if self.repaired > self.detected or self.residual_after_verify < 0:
            raise ValueError("inconsistent cycle counts")

    def to_dict(self) -> dict:
        return asdict(self)


def match_ground_truth(regions: Sequence[DefectRegion], centers: Sequence[BedPoint]) -> tuple[list[float], bool]:
    """Distance from each region to its nearest injected centre, and whether
    that nearest-centre assignment is a bijection."""
    if not centers:
        return [], not regions
    truth = np.asarray(centers, dtype=float)
    errors, picks = [], []
    for r in regions:
        dist = np.hypot(truth[:, 0] - r.centroid_mm.x, truth[:, 1] - r.centroid_mm.y)
        k = int(np.argmin(dist))
        picks.append(k)
        errors.append(float(dist[k]))
    return errors, len(set(picks)) == len(picks) == len(centers)


def run_layer_cycle(
    scenario: Scenario = Scenario(),
    telemetry: Optional[Telemetry] = None,
    images: Optional[dict] = None,
    layer: int = 0,
) -> CycleReport:
    """One closed-loop layer: print, heat, image, detect, repair, verify.

    ``images``, when given, receives the raw capture, rectified image,
    binary mask and overlay of the detect and verify passes.
    """
    s = scenario
    tel = telemetry or Telemetry()
    hotend = Hotend(s.hysteresis, s.plant, s.dt, s.sensor)

    def publish(**changes):
        fields = dict(
            time_s=hotend.time,
            temp_c=hotend.plant.temperature,
            heater_on=hotend.state.heater_on,
            setpoint_c=s.hysteresis.setpoint,
            layer=layer,
        )
        fields.update(changes)
        tel.publish(**fields)
        if s.throttle > 0:
            time.sleep(s.throttle)

    publish(phase=Phase.PRINTING, defects_open=0, extruder_steps_per_s=0.0)
    bed = deposit_layer(VirtualBed.empty(s.bed_span, s.bed_resolution, s.layer_z), s.sample, s.defects)

    # the print pauses until the hotend is holding temperature
    steps_allowed = int(math.ceil(s.thermal_timeout / s.dt))
    for _ in range(steps_allowed):
        if hotend.in_band():
            break
        hotend.step()
    else:
        if not hotend.in_band():
            publish(phase=Phase.IDLE)
            raise ThermalTimeout(f"hotend not in band after {s.thermal_timeout} s")
    heat_up = hotend.time

    corners = s.calibration_corners or s.camera.raw_corners(s.mapping.frame_size)
    homography = estimate_homography(CalibrationQuad.to_square(corners, s.mapping.frame_size))

    def inspect(frame: int, tag: str):
        publish(phase=Phase.CAPTURING)
        raw = capture(bed, s.camera, s.mapping, frame)
        publish(phase=Phase.DETECTING if tag == "detect" else Phase.VERIFYING)
        art = detect_with_artifacts(raw, homography, s.mapping, s.detect)
        if images is not None:
            images[f"{tag}_raw"] = raw
            images[f"{tag}_rectified"] = art.rectified
            images[f"{tag}_mask"] = np.where(art.mask, 255, 0).astype(np.uint8)
            images[f"{tag}_overlay"] = draw_overlay(art.rectified, art.regions)
        return art.regions

    regions = inspect(0, "detect")
    errors, bijection = match_ground_truth(regions, s.defects.centers)

    unreachable: list[list[float]] = []
    order: list[list[float]] = []
    per_repair: Optional[list[int]] = [] if s.verify_each else None
    open_count = len(regions)
    publish(phase=Phase.REPAIRING, defects_open=open_count)
    repaired = 0
    frame = 1
    for region in regions:
        order.append([region.centroid_mm.x, region.centroid_mm.y])
        try:
            action = plan_repair(
                region, bed, s.geom, s.extrusion, s.mapping, s.registration,
                s.repair_speed, s.pitch, s.elbow, s.repair_margin,
            )
        except (OutOfReach, Singular) as exc:
            log.warning("skipping defect at %s: %s", region.centroid_mm, exc)
            unreachable.append([region.centroid_mm.x, region.centroid_mm.y])
            continue
        rate = extrusion_rate(s.repair_speed, s.extrusion)
        publish(phase=Phase.REPAIRING, defects_open=open_count, extruder_steps_per_s=rate)
        bed = execute_repair(bed, action)
        hotend.run_for(action.dwell)
        repaired += 1
        open_count -= 1
        publish(phase=Phase.REPAIRING, defects_open=open_count, extruder_steps_per_s=0.0)
        if per_repair is not None:
            per_repair.append(len(inspect(frame, f"repair{repaired}")))
            frame += 1
            publish(phase=Phase.REPAIRING, defects_open=open_count)

    residual = inspect(frame, "verify")
    report = CycleReport(
        layer=layer,
        detected=len(regions),
        repaired=repaired,
        residual_after_verify=len(residual),
        centroid_errors_mm=errors,
        ground_truth_bijection=bijection,
        unreachable=unreachable,
        repair_order_mm=order,
        heat_up_time_s=heat_up,
        sim_time_s=hotend.time,
        per_repair_residual=per_repair,
    )
    publish(phase=Phase.IDLE, defects_open=len(residual), layer=layer + 1)
    return report

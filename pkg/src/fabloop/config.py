"""JSON scenario configuration.

Every key carries its unit in the name.  An empty file ``{}`` yields the
default scenario: a 100 x 100 mm sample with a 7 x 7 grid of 2 mm voids.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import errors
from .defect_detection import Connectivity, DetectConfig, Polarity
from .kinematics import ArmGeometry, Elbow
from .simulation import (
    DEFAULT_CAMERA_CORNERS,
    CameraModel,
    DefectSpec,
    Rect,
    Registration,
    Scenario,
    grid_centers,
    random_centers,
)
from .thermal_extrusion import (
    DEFAULT_STEINHART_HART,
    DividerConfig,
    ExtrusionConfig,
    HysteresisConfig,
    Sensor,
    SteinhartHart,
    ThermalPlant,
)
from .vision_geometry import BedMapping, PixelPoint

SEED_ENV = "FABLOOP_SEED"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


class ArmConfig(_Section):
    d1_mm: float = Field(126.0, gt=0)
    a2_mm: float = Field(300.0, gt=0)
    a3_mm: float = Field(300.0, gt=0)
    d6_mm: float = Field(90.0, gt=0)
    pitch_rad: float = 0.0
    elbow: Literal["up", "down"] = "up"

    def geometry(self) -> ArmGeometry:
        return ArmGeometry(self.d1_mm, self.a2_mm, self.a3_mm, self.d6_mm)


class RegistrationConfig(_Section):
    x_mm: float = 200.0
    y_mm: float = -100.5
    z_mm: float = 0.0
    yaw_rad: float = 0.0


class BedConfig(_Section):
    span_x_mm: float = Field(201.0, gt=0)
    span_y_mm: float = Field(201.0, gt=0)
    resolution_mm: float = Field(0.1, gt=0)
    layer_z_mm: float = Field(0.2, ge=0)

    @model_validator(mode="after")
    def _whole_cells(self):
        for name in ("span_x_mm", "span_y_mm"):
            cells = getattr(self, name) / self.resolution_mm
            if abs(cells - round(cells)) > 1e-9:
                raise ValueError(f"{name} must be a whole number of resolution_mm cells")
        return self


class SampleConfig(_Section):
    x_mm: float = Field(50.5, ge=0)
    y_mm: float = Field(50.5, ge=0)
    width_mm: float = Field(100.0, gt=0)
    height_mm: float = Field(100.0, gt=0)

    def rect(self) -> Rect:
        return Rect(self.x_mm, self.y_mm, self.width_mm, self.height_mm)


class DefectsConfig(_Section):
    layout: Literal["grid", "random", "explicit"] = "grid"
    diameter_mm: float = Field(2.0, gt=0)
    rows: int = Field(7, ge=0)
    cols: int = Field(7, ge=0)
    count: int = Field(0, ge=0)
    gap_mm: float = Field(1.5, ge=0)
    centers_mm: list[tuple[float, float]] = []


class CameraConfig(_Section):
    raw_width_px: int = Field(640, ge=1)
    raw_height_px: int = Field(480, ge=1)
    noise_sigma: float = Field(2.0, ge=0)
    material_intensity: int = Field(200, ge=0, le=255)
    void_intensity: int = Field(40, ge=0, le=255)
    corners_px: list[tuple[float, float]] = Field(
        default_factory=lambda: [tuple(c) for c in DEFAULT_CAMERA_CORNERS], min_length=4, max_length=4
    )


class CalibrationConfig(_Section):
    # raw-image corners (TL, TR, BR, BL) picked for rectification; null = camera ground truth
    corners_px: Optional[list[tuple[float, float]]] = Field(None, min_length=4, max_length=4)


class MappingConfig(_Section):
    rect_size_px: int = Field(400, ge=1)
    mm_per_px: float = Field(0.67, gt=0)
    roi_origin_px: tuple[int, int] = (50, 50)
    roi_size_px: int = Field(300, ge=1)

    @model_validator(mode="after")
    def _roi_fits(self):
        u0, v0 = self.roi_origin_px
        if u0 < 0 or v0 < 0 or max(u0, v0) + self.roi_size_px > self.rect_size_px:
            raise ValueError("ROI does not fit inside the rectified frame")
        return self

    def mapping(self) -> BedMapping:
        return BedMapping(self.mm_per_px, PixelPoint(*map(float, self.roi_origin_px)),
                          self.roi_size_px, self.rect_size_px)


class DetectionConfig(_Section):
    polarity: Literal["dark", "bright"] = "dark"
    min_area_px: int = Field(1, ge=1)
    connectivity: Literal[4, 8] = 8
    exclude_border: bool = True


class PlantConfig(_Section):
    heat_capacity_j_per_k: float = Field(12.0, gt=0)
    loss_w_per_k: float = Field(0.18, gt=0)
    power_w: float = Field(40.0, gt=0)
    ambient_c: float = 25.0


class DividerSection(_Section):
    v_supply: float = Field(3.3, gt=0)
    r_fixed_ohm: float = Field(4700.0, gt=0)
    adc_max: int = Field(4095, ge=1)


class SteinhartHartConfig(_Section):
    a: float = DEFAULT_STEINHART_HART.a
    b: float = DEFAULT_STEINHART_HART.b
    c: float = DEFAULT_STEINHART_HART.c


class ThermalConfig(_Section):
    setpoint_c: float = 200.0
    half_band_c: float = Field(2.0, gt=0)
    dt_s: float = Field(0.01, gt=0)
    duration_s: float = Field(600.0, gt=0)
    timeout_s: float = Field(600.0, gt=0)
    use_sensor: bool = True
    plant: PlantConfig = PlantConfig()
    divider: DividerSection = DividerSection()
    steinhart_hart: SteinhartHartConfig = SteinhartHartConfig()

    @model_validator(mode="after")
    def _stable_step(self):
        if self.dt_s * self.plant.loss_w_per_k / self.plant.heat_capacity_j_per_k >= 1.0:
            raise ValueError("dt_s too large for explicit Euler (dt*k/C must be < 1)")
        return self

    def hysteresis(self) -> HysteresisConfig:
        return HysteresisConfig(self.setpoint_c, self.half_band_c)

    def plant_model(self) -> ThermalPlant:
        p = self.plant
        return ThermalPlant(p.heat_capacity_j_per_k, p.loss_w_per_k, p.power_w, p.ambient_c, p.ambient_c)

    def sensor(self) -> Optional[Sensor]:
        if not self.use_sensor:
            return None
        d = self.divider
        sh = self.steinhart_hart
        return Sensor(DividerConfig(d.v_supply, d.r_fixed_ohm, d.adc_max), SteinhartHart(sh.a, sh.b, sh.c))


class ExtrusionSection(_Section):
    steps_per_mm: float = Field(100.0, gt=0)
    filament_diameter_mm: float = Field(1.75, gt=0)
    road_width_mm: float = Field(0.4, gt=0)
    layer_height_mm: float = Field(0.2, gt=0)
    repair_speed_mm_s: float = Field(10.0, gt=0)

    def extrusion(self) -> ExtrusionConfig:
        return ExtrusionConfig(self.steps_per_mm, self.filament_diameter_mm,
                               self.road_width_mm, self.layer_height_mm)


class RepairConfig(_Section):
    margin_mm: Optional[float] = Field(None, ge=0)  # null = one bed cell
    verify_each: bool = False


class ScenarioConfig(_Section):
    seed: int = 0
    throttle_s: float = Field(0.0, ge=0)
    arm: ArmConfig = ArmConfig()
    registration: RegistrationConfig = RegistrationConfig()
    bed: BedConfig = BedConfig()
    sample: SampleConfig = SampleConfig()
    defects: DefectsConfig = DefectsConfig()
    camera: CameraConfig = CameraConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    mapping: MappingConfig = MappingConfig()
    detection: DetectionConfig = DetectionConfig()
    thermal: ThermalConfig = ThermalConfig()
    extrusion: ExtrusionSection = ExtrusionSection()
    repair: RepairConfig = RepairConfig()

    @model_validator(mode="after")
    def _sample_on_bed(self):
        s, b = self.sample, self.bed
        if s.x_mm + s.width_mm > b.span_x_mm + 1e-9 or s.y_mm + s.height_mm > b.span_y_mm + 1e-9:
            raise ValueError("sample rectangle exceeds the bed span")
        if self.defects.layout == "explicit":
            region = s.rect()
            for i, (x, y) in enumerate(self.defects.centers_mm):
                if not region.contains(x, y):
                    raise ValueError(f"defects.centers_mm[{i}] lies outside the sample")
        return self

    def defect_spec(self) -> DefectSpec:
        d = self.defects
        region = self.sample.rect()
        if d.layout == "grid":
            centers = grid_centers(region, d.rows, d.cols) if d.rows and d.cols else []
        elif d.layout == "random":
            centers = random_centers(np.random.default_rng(self.seed), d.count, region, d.diameter_mm, d.gap_mm)
        else:
            centers = list(d.centers_mm)
        return DefectSpec(tuple(centers), d.diameter_mm)

    def to_scenario(self) -> Scenario:
        """Domain objects for the simulator; raises ValidationError on
        combinations the schema alone cannot rule out (e.g. a degenerate
        camera quad or an overcrowded random layout)."""
        try:
            return self._build()
        except (ValueError, errors.FabloopError) as exc:
            raise errors.ValidationError(str(exc)) from exc

    def _build(self) -> Scenario:
        cam = self.camera
        mapping = self.mapping.mapping()
        th = self.thermal
        reg = self.registration
        return Scenario(
            geom=self.arm.geometry(),
            pitch=self.arm.pitch_rad,
            elbow=Elbow(self.arm.elbow),
            registration=Registration(reg.x_mm, reg.y_mm, reg.z_mm, reg.yaw_rad),
            bed_span=(self.bed.span_x_mm, self.bed.span_y_mm),
            bed_resolution=self.bed.resolution_mm,
            layer_z=self.bed.layer_z_mm,
            sample=self.sample.rect(),
            defects=self.defect_spec(),
            camera=CameraModel.from_corners(
                cam.corners_px,
                mapping.frame_size,
                raw_size=(cam.raw_width_px, cam.raw_height_px),
                noise_sigma=cam.noise_sigma,
                seed=self.seed,
                material_intensity=cam.material_intensity,
                void_intensity=cam.void_intensity,
            ),
            mapping=mapping,
            calibration_corners=None if self.calibration.corners_px is None
            else tuple(tuple(c) for c in self.calibration.corners_px),
            detect=DetectConfig(Polarity(self.detection.polarity), self.detection.min_area_px,
                                Connectivity(self.detection.connectivity), self.detection.exclude_border),
            hysteresis=th.hysteresis(),
            plant=th.plant_model(),
            sensor=th.sensor(),
            dt=th.dt_s,
            thermal_timeout=th.timeout_s,
            extrusion=self.extrusion.extrusion(),
            repair_speed=self.extrusion.repair_speed_mm_s,
            repair_margin=self.repair.margin_mm,
            verify_each=self.repair.verify_each,
            throttle=self.throttle_s,
        )


def _raise_from_pydantic(exc: pydantic.ValidationError):
    err = exc.errors()[0]
    path = ".".join(str(p) for p in err["loc"])
    if err["type"] == "extra_forbidden":
        raise errors.UnknownKey("unknown key", path) from None
    raise errors.ValidationError(err["msg"], path) from None


def parse_config(data, apply_env: bool = True) -> ScenarioConfig:
    """Validate an already-decoded JSON object."""
    if not isinstance(data, dict):
        raise errors.ValidationError("top level must be a JSON object")
    try:
        cfg = ScenarioConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        _raise_from_pydantic(exc)
    if apply_env and os.environ.get(SEED_ENV, "").strip():
        raw = os.environ[SEED_ENV]
        try:
            seed = int(raw)
        except ValueError:
            raise errors.ValidationError(f"{SEED_ENV}={raw!r} is not an integer", "seed") from None
        cfg = cfg.model_copy(update={"seed": seed})
    return cfg


def load_config(path, apply_env: bool = True) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise errors.ParseError(f"cannot read {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError as exc:
        raise errors.ParseError(f"{path} is not UTF-8: {exc}") from None
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except (json.JSONDecodeError, ValueError) as exc:
        raise errors.ParseError(f"{path}: {exc}") from None
    return parse_config(data, apply_env)


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return cfg.model_dump(mode="json")


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)

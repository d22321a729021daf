"""Simulated hotend: thermistor read-out, bang-bang heater control,
lumped thermal plant and velocity-matched extrusion."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .errors import NonPhysical, OpenCircuit, ShortCircuit, SingularSystem, UnstableStep

KELVIN = 273.15

# ATC Semitec 104GT-2 calibration points (ohms, degC), as published in
# common printer-firmware sensor tables.
SEMITEC_104GT2_POINTS = ((126800.0, 20.0), (1360.0, 150.0), (80.65, 300.0))


@dataclass(frozen=True)
class SteinhartHart:
    """Coefficients of ``1/T = A + B ln R + C (ln R)^3`` with T in kelvin."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.a, self.b, self.c)):
            raise ValueError("Steinhart-Hart coefficients must be finite")


@dataclass(frozen=True)
class DividerConfig:
    """Thermistor from supply to the sense node, ``r_fixed`` to ground."""

    v_supply: float = 3.3
    r_fixed: float = 4700.0
    adc_max: int = 4095

    def __post_init__(self):
        if not self.v_supply > 0:
            raise ValueError("v_supply must be > 0")
        if not self.r_fixed > 0:
            raise ValueError("r_fixed must be > 0")
        if self.adc_max < 1:
            raise ValueError("adc_max must be >= 1")


@dataclass(frozen=True)
class HysteresisConfig:
    setpoint: float = 200.0
    half_band: float = 2.0

    def __post_init__(self):
        if not self.half_band > 0:
            raise ValueError("half_band must be > 0")

    @property
    def low(self) -> float:
        return self.setpoint - self.half_band

    @property
    def high(self) -> float:
        return self.setpoint + self.half_band


@dataclass(frozen=True)
class ControllerState:
    heater_on: bool = False
    last_temp: float = float("nan")
    toggle_count: int = 0


@dataclass(frozen=True)
class ThermalPlant:
    heat_capacity: float = 12.0  # J/K
    loss_coefficient: float = 0.18  # W/K
    heater_power: float = 40.0  # W
    t_ambient: float = 25.0
    temperature: float = 25.0

    def __post_init__(self):
        for name in ("heat_capacity", "loss_coefficient", "heater_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def steady_state_on(self) -> float:
        return self.t_ambient + self.heater_power / self.loss_coefficient


@dataclass(frozen=True)
class ExtrusionConfig:
    steps_per_mm: float = 100.0
    filament_diameter: float = 1.75
    road_width: float = 0.4
    layer_height: float = 0.2

    def __post_init__(self):
        for name in ("steps_per_mm", "filament_diameter", "road_width", "layer_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def filament_area(self) -> float:
        return math.pi * (self.filament_diameter / 2.0) ** 2


def adc_to_resistance(counts: int, d: DividerConfig) -> float:
    """Thermistor resistance from a raw ADC reading.

    A full-scale reading means a shorted thermistor: 0 is returned and a
    :class:`ShortCircuit` warning is emitted.
    """
    if not 0 <= counts <= d.adc_max:
        raise ValueError(f"counts {counts} outside 0..{d.adc_max}")
    if counts == 0:
        raise OpenCircuit("ADC reads 0: thermistor open circuit")
    if counts == d.adc_max:
        warnings.warn("ADC at full scale: thermistor short circuit", ShortCircuit, stacklevel=2)
        return 0.0
    volts = d.v_supply * counts / d.adc_max
    return d.r_fixed * (d.v_supply / volts - 1.0)


def resistance_to_adc(r: float, d: DividerConfig) -> int:
    """Nearest ADC count the divider produces for thermistor resistance ``r``."""
    return int(round(d.adc_max * d.r_fixed / (r + d.r_fixed)))


def resistance_to_temperature(r: float, c: SteinhartHart) -> float:
    if not r > 0:
        raise ValueError(f"resistance must be > 0, got {r!r}")
    ln_r = math.log(r)
    denom = c.a + c.b * ln_r + c.c * ln_r ** 3
    if not denom > 0:
        raise NonPhysical(f"Steinhart-Hart denominator {denom!r} <= 0 at R={r!r}")
    return 1.0 / denom - KELVIN


def temperature_to_resistance(temp_c: float, c: SteinhartHart) -> float:
    """Invert the Steinhart-Hart model (real root of the depressed cubic in ln R)."""
    y = 1.0 / (temp_c + KELVIN)
    if c.c == 0.0:
        if c.b == 0.0:
            raise NonPhysical("model is independent of resistance")
        return math.exp((y - c.a) / c.b)
    # C x^3 + B x + (A - y) = 0
    p = c.b / c.c
    q = (c.a - y) / c.c
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc < 0:
        raise NonPhysical("Steinhart-Hart model is not monotone at this temperature")
    s = math.sqrt(disc)
    x = _cbrt(-q / 2.0 + s) + _cbrt(-q / 2.0 - s)
    return math.exp(x)


def _cbrt(x: float) -> float:
    return math.copysign(abs(x) ** (1.0 / 3.0), x)


def fit_steinhart_hart(points: Iterable[tuple[float, float]]) -> SteinhartHart:
    """Solve for (A, B, C) from three (ohms, degC) calibration points."""
    pts = [(float(r), float(t)) for r, t in points]
    if len(pts) != 3:
        raise ValueError("exactly three calibration points are required")
    if any(not r > 0 for r, _ in pts):
        raise ValueError("calibration resistances must be > 0")
    logs = [math.log(r) for r, _ in pts]
    spread = max(logs) - min(logs)
    for i in range(3):
        for j in range(i + 1, 3):
            if abs(logs[i] - logs[j]) <= 1e-9 * max(spread, 1.0):
                raise SingularSystem("calibration resistances are duplicated")
    m = np.array([[1.0, x, x ** 3] for x in logs])
    rhs = np.array([1.0 / (t + KELVIN) for _, t in pts])
    try:
        a, b, c = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return SteinhartHart(float(a), float(b), float(c))


def control_step(temp: float, cfg: HysteresisConfig, s: ControllerState) -> ControllerState:
    if temp <= cfg.low:
        heater = True
    elif temp >= cfg.high:
        heater = False
    else:
        heater = s.heater_on
    toggles = s.toggle_count + (heater != s.heater_on)
    return ControllerState(heater_on=heater, last_temp=temp, toggle_count=toggles)


def plant_step(p: ThermalPlant, heater_on: bool, dt: float) -> ThermalPlant:
    """One explicit-Euler step of ``C dT/dt = P*on - k (T - T_amb)``."""
    if not dt > 0 or dt * p.loss_coefficient / p.heat_capacity >= 1.0:
        raise UnstableStep(
            f"dt={dt!r} violates 0 < dt*k/C < 1 (k/C={p.loss_coefficient / p.heat_capacity:.4g})"
        )
    power = p.heater_power if heater_on else 0.0
    dtemp = dt * (power - p.loss_coefficient * (p.temperature - p.t_ambient)) / p.heat_capacity
    return replace(p, temperature=p.temperature + dtemp)


def analytic_temperature(p: ThermalPlant, heater_on: bool, t: float) -> float:
    """Exact solution of the plant ODE from ``p.temperature`` after ``t`` seconds."""
    target = p.t_ambient + (p.heater_power / p.loss_coefficient if heater_on else 0.0)
    decay = math.exp(-p.loss_coefficient * t / p.heat_capacity)
    return target + (p.temperature - target) * decay


def max_step_change(p: ThermalPlant, dt: float, t_max: float) -> float:
    """Upper bound on |dT| per step while T stays within [t_ambient, t_max]."""
    heating = p.heater_power
    cooling = p.loss_coefficient * max(t_max - p.t_ambient, 0.0)
    return dt * max(heating, cooling) / p.heat_capacity


def extrusion_rate(robot_speed: float, e: ExtrusionConfig, retract: bool = False) -> float:
    """Stepper rate (steps/s) delivering the road cross-section at ``robot_speed``.

    Negative when ``retract`` is set.
    """
    if robot_speed < 0:
        raise ValueError("robot_speed must be >= 0")
    feed = robot_speed * e.road_width * e.layer_height / e.filament_area
    rate = feed * e.steps_per_mm
    return -rate if retract else rate


class ThermalSample(NamedTuple):
    time: float
    temp: float
    heater_on: bool


@dataclass(frozen=True)
class Sensor:
    """Measurement path: plant temperature -> divider ADC count -> degC."""

    divider: DividerConfig
    coefficients: SteinhartHart

    def read(self, temp_c: float) -> float:
        r = temperature_to_resistance(temp_c, self.coefficients)
        counts = min(max(resistance_to_adc(r, self.divider), 1), self.divider.adc_max - 1)
        return resistance_to_temperature(adc_to_resistance(counts, self.divider), self.coefficients)


class Hotend:
    """Stateful controller + plant pair, advanced in fixed ``dt`` steps.

    Each step measures, updates the relay, then integrates the plant with
    the new relay state.
    """

    def __init__(self, cfg: HysteresisConfig, plant: ThermalPlant, dt: float, sensor: Optional[Sensor] = None):
        plant_step(plant, False, dt)  # validates dt up front
        self.cfg = cfg
        self.plant = plant
        self.dt = dt
        self.sensor = sensor
        self.state = ControllerState(last_temp=self.measure())
        self.time = 0.0
        self._steps = 0

    def measure(self) -> float:
        t = self.plant.temperature
        return self.sensor.read(t) if self.sensor is not None else t

    def step(self) -> ThermalSample:
        """Control on the current reading, integrate, then re-read the sensor."""
        self.state = control_step(self.state.last_temp, self.cfg, self.state)
        self.plant = plant_step(self.plant, self.state.heater_on, self.dt)
        self.state = replace(self.state, last_temp=self.measure())
        self._steps += 1
        self.time = self._steps * self.dt
        return ThermalSample(self.time, self.plant.temperature, self.state.heater_on)

    def in_band(self) -> bool:
        """Whether the latest reading lies inside the hysteresis band."""
        return self.cfg.low <= self.state.last_temp <= self.cfg.high

    def run_for(self, seconds: float) -> None:
        for _ in range(int(math.ceil(seconds / self.dt - 1e-9))):
            self.step()


def simulate_thermal(
    cfg: HysteresisConfig,
    p: ThermalPlant,
    duration: float,
    dt: float,
    sensor: Optional[Sensor] = None,
) -> list[ThermalSample]:
    """Closed-loop trace; the first sample is the initial state at t = 0."""
    hotend = Hotend(cfg, p, dt, sensor)
    trace = [ThermalSample(0.0, p.temperature, False)]
    for _ in range(int(round(duration / dt))):
        trace.append(hotend.step())
    return trace


DEFAULT_STEINHART_HART = fit_steinhart_hart(SEMITEC_104GT2_POINTS)

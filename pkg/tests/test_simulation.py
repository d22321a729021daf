import dataclasses
import json
import math

import numpy as np
import pytest

from fabloop.defect_detection import DefectRegion, detect, quantify
from fabloop.errors import OutOfBed, OutOfReach, ThermalTimeout
from fabloop.kinematics import ArmGeometry, forward_kinematics
from fabloop.simulation import (
    CameraModel,
    DefectSpec,
    Rect,
    Registration,
    RepairAction,
    Scenario,
    VirtualBed,
    capture,
    deposit_layer,
    execute_repair,
    grid_centers,
    match_ground_truth,
    plan_repair,
    random_centers,
    render_ideal,
    run_layer_cycle,
)
from fabloop.thermal_extrusion import ExtrusionConfig, ThermalPlant
from fabloop.vision_geometry import BedMapping, BedPoint, Homography, PixelPoint, rectify

SAMPLE = Rect(50.5, 50.5, 100.0, 100.0)


def bed_with(defects=DefectSpec(), region=SAMPLE):
    return deposit_layer(VirtualBed.empty((201.0, 201.0), 0.1, 0.2), region, defects)


def cells_in_disc(bed, cx, cy, r):
    ny, nx = bed.occupancy.shape
    xs = (np.arange(nx) + 0.5) * bed.resolution
    ys = (np.arange(ny) + 0.5) * bed.resolution
    return (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= r * r


# deposit

def test_deposit_fills_region():
    bed = bed_with()
    ny, nx = bed.occupancy.shape
    xs = (np.arange(nx) + 0.5) * 0.1
    ys = (np.arange(ny) + 0.5) * 0.1
    inside = ((xs >= 50.5) & (xs <= 150.5))[None, :] & ((ys >= 50.5) & (ys <= 150.5))[:, None]
    np.testing.assert_array_equal(bed.occupancy, inside)


def test_deposit_49_discs():
    centers = grid_centers(SAMPLE, 7, 7)
    bed = bed_with(DefectSpec(tuple(centers), 2.0))
    full = bed_with()
    for cx, cy in centers:
        disc = cells_in_disc(bed, cx, cy, 1.0)
        assert not bed.occupancy[disc].any()
        assert disc.sum() > 300  # ~pi / 0.01 cells
    voids = full.occupancy & ~bed.occupancy
    assert voids.sum() == sum(cells_in_disc(bed, cx, cy, 1.0).sum() for cx, cy in centers)


def test_overlapping_defects_union():
    a, b = (100.0, 100.0), (101.0, 100.0)
    bed = bed_with(DefectSpec((a, b), 2.0))
    expected = bed_with().occupancy & ~(cells_in_disc(bed, *a, 1.0) | cells_in_disc(bed, *b, 1.0))
    np.testing.assert_array_equal(bed.occupancy, expected)


def test_deposit_out_of_bed():
    with pytest.raises(OutOfBed):
        bed_with(region=Rect(150.0, 150.0, 100.0, 10.0))


def test_bed_shape_validation():
    with pytest.raises(ValueError):
        VirtualBed.empty((10.05, 10.0), 0.1)


# capture

def test_identity_camera_noise_free_matches_render():
    bed = bed_with(DefectSpec(((100.0, 100.0),), 2.0))
    cam = CameraModel(Homography.identity(), raw_size=(400, 400), noise_sigma=0.0)
    np.testing.assert_array_equal(capture(bed, cam), render_ideal(bed))


def test_warped_capture_rectifies_back():
    s = Scenario()
    bed = bed_with(s.defects)
    cam = dataclasses.replace(s.camera, noise_sigma=0.0)
    back = rectify(capture(bed, cam), cam.warp.inverse(), 400, background=40)
    diff = np.abs(back.astype(int) - render_ideal(bed).astype(int))
    assert diff.mean() < 2.0


def test_capture_deterministic_per_seed():
    s = Scenario()
    bed = bed_with(s.defects)
    a = capture(bed, s.camera, frame=0)
    np.testing.assert_array_equal(a, capture(bed, s.camera, frame=0))
    assert not np.array_equal(a, capture(bed, s.camera, frame=1))
    other = dataclasses.replace(s.camera, seed=99)
    assert not np.array_equal(a, capture(bed, other, frame=0))


# repair planning

def region_at(x, y, area_px=7, mapping=BedMapping()):
    u = x / mapping.mm_per_pixel + mapping.roi_origin.u
    v = y / mapping.mm_per_pixel + mapping.roi_origin.v
    r = DefectRegion(PixelPoint(u, v), area_px, (int(u) - 1, int(v) - 1, int(u) + 1, int(v) + 1))
    return quantify([r], mapping)[0]


def test_plan_repair_at_bed_centre(geom):
    bed = bed_with()
    reg = Registration()
    d = region_at(100.5, 100.5)
    a = plan_repair(d, bed, geom, ExtrusionConfig(), registration=reg)
    x, y, z = reg.to_bed(forward_kinematics(a.joints, geom).position)
    assert abs(x - 100.5) < 0.01 and abs(y - 100.5) < 0.01
    assert z == pytest.approx(bed.layer_z, abs=1e-9)


def test_plan_repair_with_yawed_registration(geom):
    reg = Registration(x=150.0, y=50.0, z=-20.0, yaw=0.7)
    bed = bed_with()
    d = region_at(30.0, 140.0)
    a = plan_repair(d, bed, geom, ExtrusionConfig(), registration=reg)
    x, y, z = reg.to_bed(forward_kinematics(a.joints, geom).position)
    assert (x, y, z) == pytest.approx((d.centroid_mm.x, d.centroid_mm.y, 0.2), abs=1e-9)


def test_plan_repair_out_of_reach(geom):
    far = Registration(x=5000.0, y=0.0)
    with pytest.raises(OutOfReach):
        plan_repair(region_at(10.0, 10.0), bed_with(), geom, ExtrusionConfig(), registration=far)


def test_fill_volume_of_2mm_defect(geom):
    # one pixel of sqrt(pi) mm covers exactly the 2 mm disc area
    mapping = BedMapping(mm_per_pixel=math.sqrt(math.pi), roi_origin=(0, 0), roi_size=100)
    d = region_at(50.0, 50.0, area_px=1, mapping=mapping)
    a = plan_repair(d, bed_with(), geom, ExtrusionConfig(layer_height=0.2), mapping)
    assert a.fill_volume == pytest.approx(math.pi * 0.2, rel=1e-12)
    assert a.fill_volume == pytest.approx(0.628, abs=5e-4)
    assert a.dwell == pytest.approx(a.fill_volume / (10.0 * 0.4 * 0.2))
    # 7 default-resolution pixels are ~pi mm^2 as well
    seven = plan_repair(region_at(50.0, 50.0, 7), bed_with(), geom, ExtrusionConfig())
    assert seven.fill_volume == pytest.approx(0.628, abs=5e-4)


# repair execution

def test_repair_is_local_and_idempotent(geom):
    bed = bed_with(DefectSpec(((100.0, 100.0),), 2.0))
    a = plan_repair(region_at(100.1, 99.8), bed, geom, ExtrusionConfig())
    fixed = execute_repair(bed, a)
    changed = fixed.occupancy != bed.occupancy
    radius = a.target.equivalent_diameter_mm / 2 + a.margin
    allowed = cells_in_disc(bed, 100.1, 99.8, radius)
    assert changed.any() and not (changed & ~allowed).any()
    assert fixed.occupancy.sum() >= bed.occupancy.sum()
    np.testing.assert_array_equal(execute_repair(fixed, a).occupancy, fixed.occupancy)
    full = bed_with()
    np.testing.assert_array_equal(execute_repair(full, a).occupancy, full.occupancy)


def test_repair_closes_detected_void(geom):
    s = Scenario()
    bed = bed_with(DefectSpec(((90.0, 110.0),), 2.0))
    from fabloop.vision_geometry import CalibrationQuad, estimate_homography
    h = estimate_homography(CalibrationQuad.to_square(s.camera.raw_corners(), 400))
    (d,) = detect(capture(bed, s.camera), h, s.mapping, s.detect)
    bed = execute_repair(bed, plan_repair(d, bed, geom, s.extrusion))
    assert detect(capture(bed, s.camera, frame=1), h, s.mapping, s.detect) == []


# ground truth matching

def test_match_ground_truth():
    regions = [region_at(10.0, 10.0), region_at(20.0, 20.0)]
    errors, bij = match_ground_truth(regions, [BedPoint(10.2, 10.0), BedPoint(20.0, 20.0)])
    assert errors == pytest.approx([0.2, 0.0], abs=1e-9) and bij
    _, bij = match_ground_truth(regions, [BedPoint(15.0, 15.0)])
    assert not bij


# full cycle

def test_replication_cycle():
    report = run_layer_cycle(Scenario())
    assert (report.detected, report.repaired, report.residual_after_verify) == (49, 49, 0)
    assert max(report.centroid_errors_mm) <= 0.7
    assert report.ground_truth_bijection
    first_x = report.repair_order_mm[0][0]
    assert all(abs(p[0] - first_x) < 1.0 for p in report.repair_order_mm[:7])
    assert all(p[0] - first_x > 5.0 for p in report.repair_order_mm[7:])


def test_defect_free_cycle():
    report = run_layer_cycle(dataclasses.replace(Scenario(), defects=DefectSpec()))
    assert (report.detected, report.repaired, report.residual_after_verify) == (0, 0, 0)


def test_cycle_is_deterministic():
    imgs_a, imgs_b = {}, {}
    a = run_layer_cycle(Scenario(), images=imgs_a)
    b = run_layer_cycle(Scenario(), images=imgs_b)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
    assert imgs_a.keys() == imgs_b.keys()
    for k in imgs_a:
        assert imgs_a[k].tobytes() == imgs_b[k].tobytes()


def test_random_trials_leave_no_residual():
    rng = np.random.default_rng(7)
    base = Scenario()
    for trial in range(50):
        count = int(rng.integers(1, 50))
        centers = random_centers(rng, count, base.sample, 2.0, 1.5)
        s = dataclasses.replace(
            base,
            defects=DefectSpec(tuple(centers), 2.0),
            camera=dataclasses.replace(base.camera, seed=trial),
        )
        r = run_layer_cycle(s)
        assert (r.detected, r.repaired, r.residual_after_verify) == (count, count, 0), trial
        assert r.ground_truth_bijection and max(r.centroid_errors_mm) <= 0.7


def test_unreachable_defects_are_skipped():
    s = dataclasses.replace(Scenario(), geom=ArmGeometry(126.0, 150.0, 150.0, 90.0))
    r = run_layer_cycle(s)
    assert r.detected == 49
    assert 0 < len(r.unreachable) < 49
    assert r.repaired == 49 - len(r.unreachable)
    assert r.residual_after_verify == len(r.unreachable)


def test_thermal_timeout():
    weak = ThermalPlant(heater_power=5.0)  # steady state ~53 C
    with pytest.raises(ThermalTimeout):
        run_layer_cycle(dataclasses.replace(Scenario(), plant=weak, thermal_timeout=60.0))


def test_verify_each_records_shrinking_residuals():
    centers = grid_centers(SAMPLE, 2, 2)
    s = dataclasses.replace(Scenario(), defects=DefectSpec(tuple(centers), 2.0), verify_each=True)
    r = run_layer_cycle(s)
    assert r.per_repair_residual == [3, 2, 1, 0]

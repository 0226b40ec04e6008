#!/usr/bin/env python3
"""
Test calibration, plane, detection, result, depth and point-cloud files.
"""
import numpy as np
import pytest

from shapefit.bundle_io import (
    format_calibration,
    load_cloud,
    load_depth,
    load_detections,
    parse_calibration,
    parse_plane,
    read_detection_records,
    read_results,
    result_record,
    save_cloud,
    save_depth,
    write_detection_records,
    write_results,
)
from shapefit.config_models import DetectionRecord, EnergyBreakdown, FitStatus, FrameResultsRecord
from shapefit.errors import BundleParseError, GridFormatError
from shapefit.geometry import CameraIntrinsics, StereoRig
from shapefit.images import save_mask
from shapefit.metrics import ShapeMetrics
from shapefit.solver import FitResult
from shapefit.synth import default_car_pose

KITTI_P2 = "P2: 721.5377 0 609.5593 0 0 721.5377 172.854 0 0 0 1 0"
KITTI_P3 = "P3: 721.5377 0 609.5593 -339.5242 0 721.5377 172.854 0 0 0 1 0"


def test_kitti_calibration():
    rig = parse_calibration("\n".join(["P0: 1 0 0 0 0 1 0 0 0 0 1 0", KITTI_P2, KITTI_P3]))
    k = rig.intrinsics_left
    assert (k.f_u, k.f_v, k.c_u, k.c_v) == (721.5377, 721.5377, 609.5593, 172.854)
    assert rig.baseline == pytest.approx(0.4706, abs=1e-4)


def test_unit_focal_calibration():
    rig = parse_calibration("P2: 1 0 0 0 0 1 0 0 0 0 1 0\nP3: 1 0 0 -0.5 0 1 0 0 0 0 1 0\n")
    assert rig.baseline == pytest.approx(0.5)


def test_malformed_line_reports_its_number():
    text = "\n".join([KITTI_P2, "P3: 721.5377 0 609.5593 -339.5242 0 721.5377"])
    with pytest.raises(BundleParseError) as info:
        parse_calibration(text, "calib.txt")
    assert info.value.line_number == 2
    assert str(info.value).startswith("calib.txt:2:")


def test_missing_and_degenerate_calibration():
    with pytest.raises(BundleParseError, match="missing P3"):
        parse_calibration(KITTI_P2)
    with pytest.raises(BundleParseError, match="baseline"):
        parse_calibration(KITTI_P2 + "\n" + KITTI_P2.replace("P2", "P3"))
    with pytest.raises(BundleParseError):
        parse_calibration("P2: x 0 609.5593 0 0 721.5377 172.854 0 0 0 1 0\n" + KITTI_P3)


def test_calibration_text_round_trip():
    rig = StereoRig.rectified(CameraIntrinsics(300.0, 300.0, 160.0, 120.0), 0.54)
    parsed = parse_calibration(format_calibration(rig))
    assert parsed.baseline == pytest.approx(0.54)
    assert parsed.intrinsics_left == rig.intrinsics_left


def test_plane_per_frame():
    text = "# frame planes\n0 -1 0 1.65\n0 -2 0 3.2\n"
    assert parse_plane(text).offset == pytest.approx(1.65)
    assert parse_plane(text, frame=1).offset == pytest.approx(1.6)
    with pytest.raises(BundleParseError, match="no plane for frame 2"):
        parse_plane(text, frame=2)
    with pytest.raises(BundleParseError) as info:
        parse_plane("0 -1 0\n", "plane.txt")
    assert info.value.line_number == 1
    with pytest.raises(BundleParseError):
        parse_plane("1 0 0 0\n")


@pytest.fixture
def detection_files(tmp_path):
    mask = np.zeros((20, 30))
    mask[5:15, 8:20] = 1.0
    save_mask(mask, tmp_path / "m_left.png")
    save_mask(mask, tmp_path / "m_right.png")
    records = [DetectionRecord(id=4, bbox=(6, 3, 22, 17), mask_left="m_left.png", mask_right="m_right.png",
                               init_pose=default_car_pose().matrix().tolist())]
    path = tmp_path / "detections.json"
    write_detection_records(records, path)
    return path


def test_detection_round_trip(detection_files):
    records = read_detection_records(detection_files)
    assert [r.id for r in records] == [4]
    detections = load_detections(detection_files, shape=(20, 30))
    det = detections[0]
    assert det.bbox == (6, 3, 22, 17)
    assert det.mask_left[10, 10] == 1.0
    assert det.mask_left[0, 0] == 0.0
    assert np.allclose(det.init_pose.matrix(), default_car_pose().matrix())


def test_missing_mask_is_named(detection_files):
    (detection_files.parent / "m_right.png").unlink()
    with pytest.raises(BundleParseError, match="mask file not found: .*m_right.png"):
        load_detections(detection_files)


def test_mask_size_must_match_images(detection_files):
    with pytest.raises(BundleParseError, match="images are"):
        load_detections(detection_files, shape=(40, 30))


def test_duplicate_detection_ids(tmp_path, detection_files):
    record = read_detection_records(detection_files)[0]
    path = tmp_path / "dupes.json"
    write_detection_records([record, record], path)
    with pytest.raises(BundleParseError, match="duplicate"):
        read_detection_records(path)


def test_detections_must_be_a_list(tmp_path):
    path = tmp_path / "detections.json"
    path.write_text('{"id": 1}')
    with pytest.raises(BundleParseError):
        read_detection_records(path)


def test_results_round_trip(tmp_path):
    result = FitResult(instance_id=2, status=FitStatus.CONVERGED, object_to_camera=default_car_pose(),
                       z=np.array([0.1, -0.2]), energies=EnergyBreakdown(shape=0.1, photometric=0.02),
                       iterations=4, energy_history=[1.0, 0.5, 0.12])
    metrics = ShapeMetrics(completeness=0.9, accuracy=0.8, f1=0.847, rmse=0.05, threshold=0.2)
    path = tmp_path / "results.json"
    write_results(FrameResultsRecord(bundle="bundle.json", results=[result_record(result, metrics)]), path)
    loaded = read_results(path).results[0]
    assert loaded.id == 2
    assert loaded.status is FitStatus.CONVERGED
    assert np.allclose(loaded.pose, default_car_pose().matrix())
    assert loaded.shape_code == pytest.approx([0.1, -0.2])
    assert loaded.energies.total == pytest.approx(0.12)
    assert loaded.metrics.completeness == 0.9


def test_depth_round_trip(tmp_path):
    depth = np.full((4, 6), np.inf)
    depth[1:3, 2:5] = [[9.5, 9.25, 9.0], [8.5, 8.25, 8.0]]
    path = tmp_path / "depth.sdfd"
    save_depth(depth, path)
    assert np.array_equal(load_depth(path), depth)


def test_depth_file_checks(tmp_path):
    path = tmp_path / "depth.sdfd"
    save_depth(np.ones((3, 3)), path)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(GridFormatError):
        load_depth(path)


def test_cloud_round_trip(tmp_path):
    cloud = np.random.default_rng(0).normal(size=(50, 3))
    path = tmp_path / "cloud.xyz"
    save_cloud(cloud, path)
    assert np.allclose(load_cloud(path), cloud, atol=1e-6)
    with pytest.raises(BundleParseError):
        load_cloud(tmp_path / "absent.xyz")

#!/usr/bin/env python3
"""
Test config models, the key = value loader and the JSON records.
"""
import pytest
from pydantic import ValidationError

from shapefit.config_loader import ShapeFitConfigLoader, format_config, load_config, parse_value, split_key
from shapefit.config_models import (
    DetectionRecord,
    EnergyBreakdown,
    FitStatus,
    GridConfig,
    ResultRecord,
    SamplingConfig,
    ShapeFitConfig,
    SolverConfig,
)

IDENTITY = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]


def write_config(tmp_path, text):
    path = tmp_path / "shapefit.conf"
    path.write_text(text)
    return path


def test_parse_value():
    assert parse_value("75") == 75
    assert parse_value(" 0.5 ") == 0.5
    assert parse_value("yes") is True
    assert parse_value("Off") is False
    assert parse_value("[60, 40, 60]") == [60, 40, 60]
    assert parse_value("car") == "car"


def test_split_key():
    assert split_key("zeta") == ("solver", "zeta")
    assert split_key("sampling.fine_cell") == ("sampling", "fine_cell")
    assert split_key("shape_dim") == (None, "shape_dim")


def test_defaults():
    config = ShapeFitConfig()
    assert config.solver.zeta == 75.0
    assert config.solver.lambda_rotation == 1e7
    assert config.sampling.density == 0.05
    assert config.shape_dim == 5


def test_load_file(tmp_path):
    path = write_config(tmp_path, """
# solver
zeta = 60
use_photometric = no
sampling.fine_cell = 4   # finer round-two cells
grid.dims = [30, 20, 30]
shape_dim = 3
""")
    config, warnings = load_config(path)
    assert warnings == []
    assert config.solver.zeta == 60.0
    assert config.solver.use_photometric is False
    assert config.sampling.fine_cell == 4
    assert config.grid.dims == (30, 20, 30)
    assert config.shape_dim == 3


def test_bad_lines_keep_defaults(tmp_path):
    path = write_config(tmp_path, "\n".join([
        "zeta = -1",
        "colour.depth = 3",
        "nonsense = 3",
        "just some words",
        "max_iterations = 7",
    ]))
    loader = ShapeFitConfigLoader()
    config = loader.load(path)
    assert config.solver.zeta == 75.0
    assert config.solver.max_iterations == 7
    assert len(loader.validation_warnings) == 4
    assert any(":4: expected key = value" in w for w in loader.validation_warnings)
    assert any("unknown section 'colour'" in w for w in loader.validation_warnings)


def test_cross_field_validation(tmp_path):
    path = write_config(tmp_path, "sampling.fine_cell = 4\nsampling.coarse_cell = 2\n")
    config, warnings = load_config(path)
    assert config.sampling.fine_cell == 4
    assert config.sampling.coarse_cell == 32
    assert len(warnings) == 1


def test_missing_file_is_a_warning(tmp_path):
    config, warnings = load_config(tmp_path / "absent.conf")
    assert config.model_dump() == ShapeFitConfig().model_dump()
    assert warnings and "not found" in warnings[0]


def test_overrides_win_over_the_file(tmp_path):
    path = write_config(tmp_path, "max_iterations = 7\n")
    config, _ = load_config(path, {"max_iterations": "3", "sampling.density": 0.1, "seed": None})
    assert config.solver.max_iterations == 3
    assert config.sampling.density == 0.1
    assert config.seed == 0


def test_format_round_trip(tmp_path):
    original = ShapeFitConfig(solver=SolverConfig(zeta=50.0, threads=2, silhouette_sharpness=None),
                              grid=GridConfig(dims=(30, 20, 30), voxel_size=1.0 / 6.0),
                              shape_dim=3, seed=4)
    path = write_config(tmp_path, format_config(original))
    loaded, warnings = load_config(path)
    assert warnings == []
    assert loaded.model_dump() == original.model_dump()


def test_unknown_fields_are_forbidden():
    with pytest.raises(ValidationError):
        SolverConfig(zeta_prime=1.0)
    with pytest.raises(ValidationError):
        SamplingConfig(coarse_cell=4, fine_cell=8)


def test_detection_record_validation():
    record = DetectionRecord(id=0, bbox=(1, 2, 30, 40), mask_left="l.png", mask_right="r.png",
                             init_pose=IDENTITY)
    assert record.bbox_right is None
    with pytest.raises(ValidationError):
        DetectionRecord(id=0, bbox=(30, 2, 30, 40), mask_left="l.png", mask_right="r.png",
                        init_pose=IDENTITY)
    with pytest.raises(ValidationError):
        DetectionRecord(id=0, bbox=(1, 2, 30, 40), mask_left="l.png", mask_right="r.png",
                        init_pose=IDENTITY[:3])


def test_energy_total():
    energies = EnergyBreakdown(silhouette_left=1.0, silhouette_right=2.0, photometric=0.5, shape=0.25,
                               translation=0.125, rotation=0.125)
    assert energies.total == 4.0


def test_result_record_json_round_trip():
    record = ResultRecord(id=3, status=FitStatus.SKIPPED_OCCLUDED, pose=IDENTITY, shape_code=[0.0, 1.5],
                          energies=EnergyBreakdown(shape=0.2), iterations=0, message="occluded")
    text = record.model_dump_json()
    assert '"skipped-occluded"' in text
    assert ResultRecord.model_validate_json(text).model_dump() == record.model_dump()

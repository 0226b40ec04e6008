#!/usr/bin/env python3
"""
Test occlusion reasoning between detections and adaptive pixel selection.
"""
import numpy as np
import pytest

from shapefit.config_models import SamplingConfig
from shapefit.geometry import Pose
from shapefit.images import GrayImage
from shapefit.sampling import (
    Detection,
    adaptive_sample,
    clip_bbox,
    depth_order,
    occlusion_mask,
    sample_detection,
    target_count,
)

SHAPE = (120, 200)


def detection(det_id, bbox, mask_box=None):
    mask = np.zeros(SHAPE)
    u0, v0, u1, v1 = mask_box or bbox
    mask[v0:v1, u0:u1] = 1.0
    return Detection(id=det_id, bbox=bbox, mask_left=mask, mask_right=mask.copy(),
                     init_pose=Pose.identity())


@pytest.fixture
def noise_image():
    rng = np.random.default_rng(0)
    return GrayImage(rng.uniform(0, 1, (240, 320)))


def test_single_detection_is_never_occluded():
    det = detection(0, (10, 10, 60, 50))
    assert not occlusion_mask([det], 0).any()


def test_disjoint_detections_do_not_occlude():
    a = detection(0, (10, 10, 60, 50))
    b = detection(1, (100, 20, 150, 60))
    assert not occlusion_mask([a, b], 0).any()
    assert not occlusion_mask([a, b], 1).any()


def test_closer_detection_occludes_overlap():
    far = detection(0, (20, 10, 80, 60))
    # lower bbox bottom means closer; its mask overlaps the far box in a 10 x 10 square
    near = detection(1, (70, 50, 120, 100))
    assert depth_order([far, near])[0].id == 1
    assert occlusion_mask([far, near], 0).sum() == 100
    assert not occlusion_mask([far, near], 1).any()


def test_occlusion_mask_unknown_target():
    with pytest.raises(KeyError):
        occlusion_mask([detection(0, (0, 0, 10, 10))], 5)


def test_target_count():
    assert target_count((0, 0, 100, 200)) == 1000


def test_bbox_is_clipped_to_the_image():
    assert clip_bbox((-5, -2, 500, 80), SHAPE) == (0, 0, 200, 80)
    det = detection(0, (150, 100, 260, 140), mask_box=(150, 100, 200, 120))
    assert det.bbox == (150, 100, 200, 120)


def test_density_on_textured_image(noise_image):
    box = (40, 20, 240, 220)
    pixels = adaptive_sample(noise_image, box)
    assert pixels.target == 2000
    assert 0.8 * pixels.target <= len(pixels) <= 1.2 * pixels.target
    assert np.unique(pixels.pixels, axis=0).shape[0] == len(pixels)


def test_every_fine_cell_is_covered(noise_image):
    box = (40, 20, 240, 220)
    config = SamplingConfig()
    pixels = adaptive_sample(noise_image, box, config=config)
    cells = {((u - box[0]) // config.fine_cell, (v - box[1]) // config.fine_cell) for u, v in pixels.pixels}
    assert len(cells) == (200 // config.fine_cell) ** 2


def test_constant_image_falls_back_to_one_pixel_per_fine_cell():
    image = GrayImage(np.full((100, 100), 0.5))
    box = (10, 20, 74, 68)
    pixels = adaptive_sample(image, box)
    assert np.all(pixels.rounds == 2)
    assert len(pixels) == (64 // 8) * (48 // 8)
    # ties break in row-major order: the top-left pixel of each cell
    assert np.all((pixels.pixels[:, 0] - box[0]) % 8 == 0)
    assert np.all((pixels.pixels[:, 1] - box[1]) % 8 == 0)


def test_occluded_pixels_are_never_sampled(noise_image):
    box = (40, 20, 240, 220)
    occluded = np.zeros(noise_image.shape, dtype=bool)
    occluded[:, :140] = True
    pixels = adaptive_sample(noise_image, box, occluded)
    assert len(pixels) > 0
    assert np.all(pixels.pixels[:, 0] >= 140)


def test_fully_occluded_box_gives_empty_set(noise_image):
    occluded = np.ones(noise_image.shape, dtype=bool)
    pixels = adaptive_sample(noise_image, (0, 0, 50, 50), occluded)
    assert pixels.empty
    assert pixels.target == 125


def test_box_outside_the_image(noise_image):
    with pytest.raises(ValueError):
        adaptive_sample(noise_image, (400, 300, 420, 320))


def test_sample_detection_covers_both_views(car_frame, car_detection, sampling_config):
    sets = sample_detection((car_frame.left, car_frame.right), [car_detection], car_detection,
                            sampling_config)
    for side in ("left", "right"):
        u0, v0, u1, v1 = car_detection.bbox_for(side)
        pix = sets[side].pixels
        assert len(pix) > 0
        assert np.all((pix[:, 0] >= u0) & (pix[:, 0] < u1) & (pix[:, 1] >= v0) & (pix[:, 1] < v1))


def test_right_bbox_defaults_to_right_mask_extent():
    det = detection(0, (20, 10, 80, 60))
    det = Detection(id=0, bbox=det.bbox, mask_left=det.mask_left, mask_right=np.roll(det.mask_right, -10, axis=1),
                    init_pose=Pose.identity())
    assert det.bbox_for("right", padding=4) == (6, 6, 74, 64)

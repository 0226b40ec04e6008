#!/usr/bin/env python3
"""
Test the markdown report and the contour overlay.
"""
import numpy as np

from shapefit.config_models import EnergyBreakdown, FitStatus, FrameResultsRecord, MetricsRecord, ResultRecord
from shapefit.images import GrayImage
from shapefit.renderer import contour_pixels, draw_overlay, projection_map, render_report

IDENTITY = np.eye(4).tolist()


def test_report_lists_every_instance():
    results = FrameResultsRecord(bundle="bundle.json", results=[
        ResultRecord(id=0, status=FitStatus.CONVERGED, pose=IDENTITY, shape_code=[0.25, -1.0],
                     energies=EnergyBreakdown(shape=0.5), iterations=12,
                     metrics=MetricsRecord(completeness=0.9, accuracy=0.8, f1=0.85, rmse=0.04, threshold=0.2)),
        ResultRecord(id=5, status=FitStatus.FAILED, pose=IDENTITY, shape_code=[0.0, 0.0],
                     energies=EnergyBreakdown(), iterations=0, message="ValueError: broken mask"),
    ])
    text = render_report(results)
    assert "### Instance 0" in text
    assert "### Instance 5" in text
    assert "- converged: 1" in text
    assert "- failed: 1" in text
    assert "Note: ValueError: broken mask" in text
    assert "[0.250, -1.000]" in text
    assert "0.900" in text


def test_contour_of_a_disc():
    vs, us = np.mgrid[0:21, 0:21]
    pi = ((us - 10) ** 2 + (vs - 10) ** 2 <= 36).astype(np.float64)
    edge = contour_pixels(pi)
    assert edge.any()
    assert not edge[10, 10]
    assert edge[10, 4] and edge[4, 10]
    assert np.all(pi[edge] >= 0.5)


def test_overlay_marks_bbox_and_contour():
    image = GrayImage(np.full((30, 40), 0.5))
    pi = np.zeros((10, 12))
    pi[3:7, 3:9] = 1.0
    canvas = np.asarray(draw_overlay(image, [((5, 8, 17, 18), pi)]))
    assert canvas.shape == (30, 40, 3)
    assert tuple(canvas[8, 10]) != (128, 128, 128)
    assert tuple(canvas[8 + 3, 5 + 3]) != (128, 128, 128)
    assert tuple(canvas[0, 0]) == (128, 128, 128)


def test_projection_map_covers_the_object(car_model, car_scene):
    rows, cols = np.nonzero(car_scene.left.mask)
    box = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
    pi = projection_map(car_model, car_scene.shape_code, car_scene.object_to_camera, car_scene.rig, box, 75.0)
    assert pi.shape == (box[3] - box[1], box[2] - box[0])
    inside = car_scene.left.mask[box[1]:box[3], box[0]:box[2]]
    assert np.mean((pi >= 0.5) == inside) > 0.9

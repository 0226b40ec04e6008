#!/usr/bin/env python3
"""
Test the finite-difference oracle and run every registered Jacobian family.
"""
import numpy as np
import pytest

from shapefit.jacobian_check import (
    JACOBIAN_CHECKS,
    CheckContext,
    compare,
    finite_difference_jacobian,
    run_jacobian_suite,
)


@pytest.fixture(scope="module")
def check_context():
    return CheckContext.build(seed=0)


def test_finite_differences_of_a_linear_map():
    A = np.arange(12, dtype=np.float64).reshape(3, 4)
    jac = finite_difference_jacobian(lambda t: A @ t, np.ones(4), 1e-3)
    assert np.allclose(jac, A)


def test_finite_differences_of_a_quadratic():
    theta = np.array([0.5, -1.0, 2.0])
    jac = finite_difference_jacobian(lambda t: np.array([t @ t]), theta, 1e-4)
    assert np.allclose(jac, 2 * theta[None], atol=1e-8)


def test_compare_tolerances():
    numeric = np.array([[1.0, -2.0]])
    assert compare(numeric + 1e-4, numeric, 1e-3, 0.0)[0]
    ok, worst, relative = compare(numeric + 0.1, numeric, 1e-3, 1e-6)
    assert not ok
    assert worst == pytest.approx(0.1)
    assert relative == pytest.approx(0.05)


def test_all_families_are_registered():
    assert set(JACOBIAN_CHECKS) == {"silhouette", "photometric", "shape_prior",
                                    "translation_prior", "rotation_prior"}


def test_suite_passes(check_context):
    reports = run_jacobian_suite(configurations=12, seed=0, context=check_context)
    assert [r.name for r in reports] == list(JACOBIAN_CHECKS)
    for report in reports:
        assert report.configurations == 12, report
        assert report.passed, report


@pytest.mark.slow
def test_full_suite_over_500_configurations(check_context):
    reports = run_jacobian_suite(configurations=500, seed=1, context=check_context)
    for report in reports:
        assert report.configurations == 500, report
        assert report.passed, report


def test_suite_runs_selected_checks(check_context):
    reports = run_jacobian_suite(configurations=2, seed=3, names=["shape_prior"], context=check_context)
    assert len(reports) == 1
    assert reports[0].passed


def test_unknown_check_name(check_context):
    with pytest.raises(KeyError):
        run_jacobian_suite(configurations=1, names=["nonsense"], context=check_context)

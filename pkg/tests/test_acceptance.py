"""End-to-end verification: one test per numbered criterion.

Each test runs the corresponding check from pointlab.acceptance, prints
its single pass/fail line, and asserts on the packaged verdict so a
failure message carries the measured numbers.
"""

import pytest

from pointlab import acceptance


def _run(fn):
    result = fn()
    print(result.line)
    assert result.passed, result.line
    return result


def test_criterion_01_kernel_gradient_envelope():
    _run(acceptance.criterion_1)


def test_criterion_02_kernel_lp_norm_scaling():
    _run(acceptance.criterion_2)


def test_criterion_03_boundary_geometry_constant():
    _run(acceptance.criterion_3)


def test_criterion_04_emitter_flux_closed_form():
    _run(acceptance.criterion_4)


def test_criterion_05_exterior_solver_validation():
    _run(acceptance.criterion_5)


def test_criterion_06_flux_energy_inequality_and_domination():
    _run(acceptance.criterion_6)


def test_criterion_07_deviation_bounds():
    _run(acceptance.criterion_7)


def test_criterion_08_energy_identity_refinement():
    _run(acceptance.criterion_8)


def test_criterion_09_optimization_reduction():
    _run(acceptance.criterion_9)


def test_criterion_10_iterated_l1_inequality():
    _run(acceptance.criterion_10)


def test_run_all_reports_every_criterion():
    names = [fn.__name__ for fn in acceptance.ALL_CRITERIA]
    assert names == ["criterion_%d" % k for k in range(1, 11)]

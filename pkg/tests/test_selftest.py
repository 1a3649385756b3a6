import pytest

from cgnet import so3
from cgnet.selftest import SUITES, run_selftest

MODULES = ("so3_core", "covariant", "gates", "network")


@pytest.fixture(scope="module")
def default_report():
    return run_selftest()


def test_default_build_passes(default_report):
    assert default_report.passed, default_report.format()
    assert default_report.failures() == []


def test_registry_covers_every_module():
    assert len(SUITES) == 22
    assert {module for module, _, _ in SUITES.values()} == set(MODULES)
    for needed in ("wigner_unitarity", "cg_block_diagonalization", "wigner_homomorphism",
                   "gate_equivariance", "energy_invariance", "gradient_check"):
        assert needed in SUITES


def test_report_records_errors_and_tolerances(default_report):
    for r in default_report.results:
        assert r.worst_error <= r.tolerance
        assert r.name in default_report.format()


def test_injected_cg_fault_is_caught():
    with so3.perturbed_cg(1, 1, 1, 0, 1, 1e-3):
        report = run_selftest(only={"cg_block_diagonalization", "cg_completeness"})
    failed = {r.name for r in report.failures()}
    assert "cg_block_diagonalization" in failed
    assert run_selftest(only={"cg_block_diagonalization"}).passed


def test_unattainable_tolerance_fails():
    report = run_selftest(tol_scale=1e-30)
    assert not report.passed
    # suites with a nonzero error cannot meet a tolerance of 1e-30 times their default
    assert all(r.passed == (r.worst_error == 0.0) for r in report.results)


def test_override_and_unknown_suite():
    assert not run_selftest(overrides={"wigner_unitarity": 1e-30}, only={"wigner_unitarity"}).passed
    with pytest.raises(KeyError):
        run_selftest(overrides={"nope": 1.0})

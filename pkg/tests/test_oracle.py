import math

import numpy as np
import pytest

from darksqueeze.core.algebra import Boson, HilbertSpec, QuantumState
from darksqueeze.core.params import (
    AboveThresholdError,
    Branch,
    LevelKind,
    ModelLevel,
    PhysicalParams,
    Schedule,
    derive_couplings,
)
from darksqueeze.services.dynamics import EvolveConfig
from darksqueeze.services.model import (
    build_transformed_hamiltonian,
    build_two_mode_hamiltonian,
    initial_state,
    squeezed_vacuum_amplitudes,
    target_state,
)
from darksqueeze.services.oracle import (
    ComparisonReport,
    OracleError,
    Verdict,
    bogoliubov_check,
    compare_full_vs_eliminated,
    compare_gaps,
    compare_spin_vs_twomode,
    dark_state_residual,
    run_suite,
)

from conftest import REFERENCE_T


def _two_mode_ket(cavity, collective):
    dims = (len(cavity), len(collective))
    return QuantumState.ket(HilbertSpec((Boson(dims[0]), Boson(dims[1]))), np.kron(cavity, collective))


def _vacuum(dim):
    v = np.zeros(dim)
    v[0] = 1.0
    return v


# ============================================================================
# Bogoliubov identity
# ============================================================================

class TestBogoliubov:
    def test_reference_identity(self, reference_params):
        assert bogoliubov_check(reference_params, (50, 50)) < 1e-6

    def test_no_squeezing_is_exact(self, reference_params):
        params = reference_params.replace(omega2_max=0.0)
        assert bogoliubov_check(params, (20, 20)) < 1e-12

    def test_wrong_phase_fails(self, reference_params):
        assert bogoliubov_check(reference_params, (30, 30), theta_offset=0.5 * math.pi) > 1e-2

    def test_field_branch(self, reference_params):
        params = reference_params.replace(delta_a=0.0, delta_b=0.0)
        assert bogoliubov_check(params, (50, 50), Branch.FIELD) < 1e-6

    def test_above_threshold(self, reference_params):
        with pytest.raises(AboveThresholdError):
            bogoliubov_check(reference_params.replace(omega2_max=6000.0), (10, 10))


# ============================================================================
# Dark-state residual
# ============================================================================

class TestDarkStateResidual:
    def test_vacuum_is_dark_in_squeezed_frame(self, reference_params):
        h = build_transformed_hamiltonian(reference_params, None, 30, 30)
        vacuum = initial_state(ModelLevel(LevelKind.TRANSFORMED, 30, b_dim=30))
        assert dark_state_residual(h, vacuum) < 1e-12

    def test_target_is_dark(self, reference_params):
        h = build_two_mode_hamiltonian(reference_params, None, 50, 50)
        target = target_state(reference_params, ModelLevel(LevelKind.TWO_MODE, 50, b_dim=50))
        assert dark_state_residual(h, target) < 1e-6

    def test_vacuum_is_not_dark(self, reference_params):
        h = build_two_mode_hamiltonian(reference_params, None, 30, 30)
        vacuum = initial_state(ModelLevel(LevelKind.TWO_MODE, 30, b_dim=30))
        assert dark_state_residual(h, vacuum) > 1e-2

    @pytest.mark.parametrize("r_scale,theta_shift", [(1.1, 0.0), (1.0, 0.3)])
    def test_perturbed_squeezing_is_not_dark(self, reference_params, r_scale, theta_shift):
        c = derive_couplings(reference_params)
        h = build_two_mode_hamiltonian(reference_params, None, 30, 30)
        collective = squeezed_vacuum_amplitudes(c.r * r_scale, c.theta_atomic + theta_shift, 30)
        assert dark_state_residual(h, _two_mode_ket(_vacuum(30), collective)) > 1e-3

    def test_degenerate_detunings_have_two_dark_states(self, reference_params):
        params = reference_params.replace(delta_a=0.0)
        h = build_two_mode_hamiltonian(params, None, 30, 30)
        level = ModelLevel(LevelKind.TWO_MODE, 30, b_dim=30)
        for branch in Branch:
            assert dark_state_residual(h, target_state(params, level, branch)) < 1e-6

    def test_density_rejected(self, reference_params):
        h = build_two_mode_hamiltonian(reference_params, None, 4, 4)
        rho = initial_state(ModelLevel(LevelKind.TWO_MODE, 4, b_dim=4)).to_density()
        with pytest.raises(OracleError):
            dark_state_residual(h, rho)

    def test_space_mismatch(self, reference_params):
        h = build_two_mode_hamiltonian(reference_params, None, 4, 4)
        with pytest.raises(OracleError):
            dark_state_residual(h, initial_state(ModelLevel(LevelKind.TWO_MODE, 4, b_dim=5)))


# ============================================================================
# Full vs eliminated model
# ============================================================================

class TestFullVsEliminated:
    def test_single_atom_agrees(self, single_atom_params):
        schedule = Schedule(t_total=20.0, omega2_max=800.0)
        report = compare_full_vs_eliminated(single_atom_params, 1, 4, schedule, EvolveConfig(n_steps=1500))
        assert report.verdict == Verdict.PASS
        assert report.details["margin"] == pytest.approx(200.0)
        assert report.deviations["excited_population"] < report.thresholds["excited_population"]

    @pytest.mark.slow
    def test_deviation_shrinks_with_detuning(self, single_atom_params):
        schedule = Schedule(t_total=20.0, omega2_max=800.0)
        config = EvolveConfig(n_steps=20000, record_every=100)
        near = compare_full_vs_eliminated(single_atom_params, 1, 4, schedule, config)
        far_params = single_atom_params.replace(delta1=8e5, delta2=8e5, cavity_offset=0.0)
        far = compare_full_vs_eliminated(far_params, 1, 4, schedule, config)
        assert near.deviations["ground_populations"] >= 3.0 * far.deviations["ground_populations"]

    def test_no_couplings_is_trivial(self):
        params = PhysicalParams(g1=0, g2=0, omega1=0, omega2_max=0, delta1=1e4, delta2=1e4, n_atoms=1)
        report = compare_full_vs_eliminated(
            params, 1, 3, Schedule(t_total=1.0, omega2_max=0.0), EvolveConfig(n_steps=10)
        )
        assert report.passed

    def test_small_margin_is_inconclusive(self):
        params = PhysicalParams(g1=1000, g2=1000, omega1=1000, omega2_max=800, delta1=2e4, delta2=2e4, n_atoms=1)
        report = compare_full_vs_eliminated(
            params, 1, 4, Schedule(t_total=1.0, omega2_max=800.0), EvolveConfig(n_steps=10)
        )
        assert report.verdict == Verdict.INCONCLUSIVE
        assert "margin" in report.reason

    def test_three_atoms_need_opt_in(self, single_atom_params):
        params = single_atom_params.replace(n_atoms=3)
        report = compare_full_vs_eliminated(
            params, 3, 2, Schedule(t_total=1.0, omega2_max=800.0), EvolveConfig(n_steps=10)
        )
        assert report.verdict == Verdict.INCONCLUSIVE


# ============================================================================
# Spin vs two-mode model
# ============================================================================

class TestSpinVsTwoMode:
    def test_small_ensemble_is_inconclusive(self, hp_params):
        schedule = Schedule(t_total=REFERENCE_T, omega2_max=hp_params(10).omega2_max)
        report = compare_spin_vs_twomode(hp_params(10), (6, 12), schedule, EvolveConfig(n_steps=20))
        assert report.verdict == Verdict.INCONCLUSIVE

    @pytest.mark.slow
    def test_deviation_falls_with_atom_number(self, hp_params):
        config = EvolveConfig(n_steps=1000)
        reports = {}
        for n_atoms in (50, 200):
            params = hp_params(n_atoms)
            schedule = Schedule(t_total=REFERENCE_T, omega2_max=params.omega2_max)
            reports[n_atoms] = compare_spin_vs_twomode(params, (6, 20), schedule, config)
        ratio = reports[50].deviations["n_b"] / reports[200].deviations["n_b"]
        assert 2.0 <= ratio <= 8.0
        assert reports[50].details["spin_fidelity"] > 0.98


# ============================================================================
# Gaps and the suite
# ============================================================================

class TestSuite:
    def test_gap_check(self, reference_params):
        report = compare_gaps(reference_params, (3, 3))
        assert report.passed
        assert set(report.deviations) == {"ramp_start", "ramp_end"}

    def test_gap_check_above_threshold(self, reference_params):
        report = compare_gaps(reference_params.replace(omega2_max=6000.0), (3, 3))
        assert report.verdict == Verdict.INCONCLUSIVE

    def test_transformed_suite_order(self, reference_params, reference_schedule):
        level = ModelLevel(LevelKind.TRANSFORMED, 3, b_dim=3)
        reports = run_suite(
            reference_params, reference_schedule, EvolveConfig(), level, (30, 30), negative_control=True
        )
        assert [r.check for r in reports] == [
            "bogoliubov", "dark_state_residual", "bogoliubov_wrong_phase", "gap_numeric_vs_analytic",
        ]
        assert [r.verdict for r in reports] == [Verdict.PASS, Verdict.PASS, Verdict.FAIL, Verdict.PASS]
        assert reports[2].expected_failure

    def test_two_mode_suite(self, reference_params, reference_schedule):
        level = ModelLevel(LevelKind.TWO_MODE, 30, b_dim=30)
        reports = run_suite(reference_params, reference_schedule, EvolveConfig(), level, (30, 30))
        assert len(reports) == 2
        assert all(r.passed for r in reports)

    def test_report_serializes(self):
        report = ComparisonReport(
            "demo", ("two_mode",), deviations={"x": 0.1}, thresholds={"x": 1.0}
        ).judge()
        data = report.to_dict()
        assert data["verdict"] == "pass"
        assert data["levels"] == ["two_mode"]

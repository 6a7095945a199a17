import logging
import math

import numpy as np
import pytest

from darksqueeze.core.algebra import (
    Boson,
    HilbertSpec,
    QOperator,
    QuantumState,
    SpaceMismatchError,
    basis_state,
    product_state,
)
from darksqueeze.core.params import Schedule
from darksqueeze.services.model import build_transformed_hamiltonian, squeeze_operator
from darksqueeze.utils.analysis import (
    AnalysisError,
    BudgetError,
    DegeneracyError,
    cooperativity,
    delta_a_selection,
    error_budget,
    fidelity,
    gap_analytic,
    gap_numeric,
    hp_validity,
    quadrature_variance,
    squeezing_db,
    squeezing_report,
)

from conftest import REFERENCE_T


def _squeezed_b(r: float, theta: float, dim: int = 80) -> QuantumState:
    space = HilbertSpec((Boson(3), Boson(dim)))
    column = squeeze_operator(r, theta, dim, pad=100).matrix[:, 0]
    return product_state(space, [[1.0, 0.0, 0.0], column])


# ============================================================================
# Spectral gap
# ============================================================================

class TestGap:
    def test_reference_values(self):
        assert gap_analytic(250.0, 100.0) == pytest.approx(204.95, abs=0.01)
        assert gap_analytic(150.0, 100.0) == pytest.approx(108.11, abs=0.01)

    def test_limits(self):
        assert gap_analytic(0.0, 100.0) == 0.0
        assert gap_analytic(30.0, 0.0) == pytest.approx(30.0)
        # μ ≪ δ_a: δE ≈ μ²/δ_a
        assert gap_analytic(1e-3, 100.0) == pytest.approx(1e-8, rel=1e-6)

    def test_negative_mu_rejected(self):
        with pytest.raises(AnalysisError):
            gap_analytic(-1.0, 10.0)

    def test_numeric_matches_analytic_along_ramp(self, reference_params):
        for omega2 in np.linspace(0.0, 4000.0, 20):
            h = build_transformed_hamiltonian(reference_params, omega2, 3, 3)
            c_mu = math.sqrt(reference_params.n_atoms) * math.sqrt(
                (5000.0 * 50.0 / 1e6) ** 2 - (omega2 * 50.0 / 1e6) ** 2
            )
            assert gap_numeric(h) == pytest.approx(gap_analytic(c_mu, 100.0), rel=1e-9)

    def test_degenerate_block(self):
        space = HilbertSpec((Boson(2), Boson(2)))
        with pytest.raises(DegeneracyError):
            gap_numeric(QOperator(space, np.zeros((4, 4))))

    def test_zero_detunings_are_degenerate(self, reference_params):
        params = reference_params.replace(delta_a=0.0)
        assert params.delta_b == 0.0
        h = build_transformed_hamiltonian(params, None, 4, 4)
        with pytest.raises(DegeneracyError):
            gap_numeric(h)

    def test_needs_two_modes(self):
        space = HilbertSpec((Boson(4),))
        with pytest.raises(AnalysisError):
            gap_numeric(QOperator(space, np.eye(4)))

    def test_delta_a_selection(self):
        assert delta_a_selection(250.0, 150.0) == pytest.approx(100.0)


# ============================================================================
# Error budget
# ============================================================================

class TestErrorBudget:
    def test_reference_budget(self, reference_params, reference_schedule):
        budget = error_budget(reference_params, reference_schedule)
        assert budget.p_b == pytest.approx(4.639e-3, rel=0.02)
        assert budget.kappa_e == pytest.approx(0.116, rel=0.02)
        assert budget.gamma_e == pytest.approx(0.048, rel=0.02)
        assert budget.total_error == pytest.approx(0.0328, rel=0.02)
        assert budget.delta_e_max == pytest.approx(204.95, abs=0.01)

    def test_doubling_duration_quarters_leakage(self, reference_params):
        short = error_budget(reference_params, Schedule(t_total=REFERENCE_T, omega2_max=4000.0))
        long = error_budget(reference_params, Schedule(t_total=2 * REFERENCE_T, omega2_max=4000.0))
        assert long.p_b == pytest.approx(short.p_b / 4.0, rel=1e-12)
        assert long.gamma_e == pytest.approx(short.gamma_e)

    def test_leakage_falls_with_duration_and_gap(self, reference_params):
        by_duration = [
            error_budget(reference_params, Schedule(t_total=t, omega2_max=4000.0)).p_b
            for t in (10.0, 20.0, 40.0, 80.0)
        ]
        assert all(b < a for a, b in zip(by_duration, by_duration[1:]))
        schedule = Schedule(t_total=REFERENCE_T, omega2_max=4000.0)
        by_gap = [
            error_budget(reference_params, schedule, mu_path=(250.0, mu_min)).p_b
            for mu_min in (50.0, 100.0, 150.0, 200.0)
        ]
        assert all(b < a for a, b in zip(by_gap, by_gap[1:]))

    def test_explicit_mu_path(self, reference_params, reference_schedule):
        budget = error_budget(reference_params, reference_schedule, mu_path=(250.0, 150.0))
        assert budget.p_b == pytest.approx(error_budget(reference_params, reference_schedule).p_b)

    def test_zero_delta_a(self, reference_params, reference_schedule):
        with pytest.raises(BudgetError, match="delta_a must be positive for budget"):
            error_budget(reference_params.replace(delta_a=0.0), reference_schedule)

    def test_above_threshold_ramp(self, reference_params):
        params = reference_params.replace(omega2_max=6000.0)
        with pytest.raises(BudgetError):
            error_budget(params, Schedule(t_total=REFERENCE_T, omega2_max=6000.0))

    def test_to_dict(self, reference_params, reference_schedule):
        data = error_budget(reference_params, reference_schedule).to_dict()
        assert set(data) >= {"p_b", "kappa_e", "gamma_e", "total_error"}

    def test_cooperativity(self, reference_params):
        assert cooperativity(reference_params) == pytest.approx(2500.0 / (2 * 6000.0 * 25.0))
        assert cooperativity(reference_params.replace(kappa=0.0)) == math.inf


# ============================================================================
# Squeezing measures
# ============================================================================

class TestSqueezing:
    def test_vacuum_variance(self):
        state = basis_state(HilbertSpec((Boson(3), Boson(6))), [0, 0])
        for angle in (0.0, 0.7, 2.0):
            assert quadrature_variance(state, 1, angle) == pytest.approx(0.5)

    def test_squeezed_and_anti_squeezed_quadratures(self):
        r, theta = math.atanh(0.8), 0.6
        state = _squeezed_b(r, theta)
        assert quadrature_variance(state, 1, theta / 2) == pytest.approx(0.5 * math.exp(-2 * r), abs=1e-6)
        assert quadrature_variance(state, 1, theta / 2 + math.pi / 2) == pytest.approx(
            0.5 * math.exp(2 * r), rel=1e-5
        )

    def test_report(self):
        r, theta = math.atanh(0.8), 0.6
        report = squeezing_report(_squeezed_b(r, theta), 1)
        assert report.angle == pytest.approx(0.3, abs=1e-6)
        assert report.squeezing_db == pytest.approx(20 * r / math.log(10), abs=1e-3)
        assert report.uncertainty_product == pytest.approx(0.25, abs=1e-5)
        assert report.mean_photons == pytest.approx(16.0 / 9.0, abs=1e-5)

    def test_uncertainty_product_never_beats_the_vacuum(self):
        space = HilbertSpec((Boson(3), Boson(80)))
        states = [
            basis_state(space, [0, 0]),
            basis_state(space, [0, 1]),
            basis_state(space, [2, 3]),
            product_state(space, [[1.0, 0.0, 0.0], [1.0, 1.0] + [0.0] * 78]),
            QuantumState.density(space, np.diag([0.3, 0.7] + [0.0] * 238)),
            _squeezed_b(math.atanh(0.8), 0.6),
            _squeezed_b(0.4, -1.1),
        ]
        for state in states:
            assert squeezing_report(state, 1).uncertainty_product >= 0.25 - 1e-9

    def test_db_of_vacuum(self):
        assert squeezing_db(0.5) == pytest.approx(0.0)
        with pytest.raises(AnalysisError):
            squeezing_db(0.0)

    def test_mode_must_be_bosonic(self):
        state = basis_state(HilbertSpec((Boson(3), Boson(6))), [0, 0])
        with pytest.raises(AnalysisError):
            quadrature_variance(state, 2, 0.0)


# ============================================================================
# Fidelity and bosonization validity
# ============================================================================

class TestFidelity:
    def test_kets(self):
        space = HilbertSpec((Boson(3),))
        a, b = basis_state(space, [0]), basis_state(space, [1])
        assert fidelity(a, a) == pytest.approx(1.0)
        assert fidelity(a, b) == 0.0

    def test_mixed_against_ket(self):
        space = HilbertSpec((Boson(2),))
        rho = QuantumState.density(space, np.diag([0.3, 0.7]))
        assert fidelity(rho, basis_state(space, [1])) == pytest.approx(0.7)
        assert fidelity(basis_state(space, [0]), rho) == pytest.approx(0.3)

    def test_two_mixed_states(self):
        space = HilbertSpec((Boson(2),))
        rho = QuantumState.density(space, np.diag([0.3, 0.7]))
        with pytest.raises(AnalysisError):
            fidelity(rho, rho)

    def test_space_mismatch(self):
        with pytest.raises(SpaceMismatchError):
            fidelity(basis_state(HilbertSpec((Boson(2),)), [0]), basis_state(HilbertSpec((Boson(3),)), [0]))


class TestHpValidity:
    def test_ratio(self):
        state = basis_state(HilbertSpec((Boson(3), Boson(5))), [0, 2])
        assert hp_validity(state, 100) == pytest.approx(0.02)

    def test_warning(self, caplog):
        state = basis_state(HilbertSpec((Boson(3), Boson(5))), [0, 2])
        with caplog.at_level(logging.WARNING, logger="darksqueeze.utils.analysis"):
            assert hp_validity(state, 10) == pytest.approx(0.2)
        assert "bosonization" in caplog.text

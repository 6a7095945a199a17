import math

import pytest

from darksqueeze.core.params import KHZ_TO_RAD_PER_US, PhysicalParams, Schedule


# ============================================================================
# Parameter sets
# ============================================================================

REFERENCE_T = 10.0 / (50.0 * KHZ_TO_RAD_PER_US)  # T = 10/g ≈ 31.83 μs


@pytest.fixture
def reference_params():
    """g = 50, Ω₁/Δ₁ = 1/200, Ω₂/Δ₂ = 1/250, N = 10⁶, δ_a = 100, δ_b = 0 (all 2π·kHz)."""
    return PhysicalParams(
        g1=50.0, g2=50.0,
        omega1=5000.0, omega2_max=4000.0,
        delta1=1.0e6, delta2=1.0e6,
        delta_a=100.0, delta_b=0.0,
        n_atoms=1_000_000,
        kappa=25.0, gamma=6000.0,
    )


@pytest.fixture
def reference_schedule():
    return Schedule(t_total=REFERENCE_T, omega2_max=4000.0)


@pytest.fixture
def single_atom_params():
    """One atom deep in the large-detuning regime, for full-vs-eliminated checks."""
    return PhysicalParams(
        g1=1000.0, g2=1000.0,
        omega1=1000.0, omega2_max=800.0,
        delta1=4.0e5, delta2=4.0e5,
        cavity_offset=0.0,
        n_atoms=1,
    )


@pytest.fixture
def hp_params():
    """Factory: √N·λ₁ = 250 and λ₂/λ₁ = tanh(0.55) at every N, so r = 0.55."""

    def build(n_atoms: int) -> PhysicalParams:
        g, delta = 2000.0, 2.0e4
        omega1 = 250.0 * delta / (g * math.sqrt(n_atoms))
        omega2 = math.tanh(0.55) * omega1
        return PhysicalParams(
            g1=g, g2=g, omega1=omega1, omega2_max=omega2,
            delta1=delta, delta2=delta,
            delta_a=100.0, delta_b=0.0,
            n_atoms=n_atoms,
        )

    return build


# ============================================================================
# Run configuration files
# ============================================================================

REFERENCE_CONFIG = f"""\
# dark-state squeezing, atomic branch
g1_kHz = 50
g2_kHz = 50
omega1_kHz = 5000
omega2_max_kHz = 4000
delta1_kHz = 1e6
delta2_kHz = 1e6
delta_a_kHz = 100      # cavity detuning after the collective shift
n_atoms = 1e6
kappa_kHz = 25
gamma_kHz = 6000
t_total_us = {REFERENCE_T!r}
"""

# small and weakly squeezed, so an evolve finishes in well under a second
QUICK_OVERRIDES = {
    "cavity_dim": "4",
    "b_dim": "8",
    "n_steps": "200",
    "truncation_tol": "1e-2",
}


@pytest.fixture
def reference_config(tmp_path):
    path = tmp_path / "reference.cfg"
    path.write_text(REFERENCE_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def quick_config(tmp_path):
    text = REFERENCE_CONFIG.replace("omega2_max_kHz = 4000", "omega2_max_kHz = 2000")
    text += "".join(f"{key} = {value}\n" for key, value in QUICK_OVERRIDES.items())
    path = tmp_path / "quick.cfg"
    path.write_text(text, encoding="utf-8")
    return path

import pytest
from pydantic import ValidationError

from darksqueeze.core.params import Branch, LevelKind
from darksqueeze.core.run_config import (
    ConfigError,
    Protocol,
    RunConfig,
    SweepSpec,
    apply_overrides,
    build_run_config,
    execute_run,
    load_run_config,
    parse_config_text,
)

from conftest import REFERENCE_CONFIG, REFERENCE_T


class TestParsing:
    def test_comments_and_blank_lines(self):
        data = parse_config_text("# header\n\ng1_kHz = 50  # cavity\nlevel=spin\n")
        assert data == {"g1_kHz": "50", "level": "spin"}

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("g1_kHz = 50\ng2_kHz 50\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key 'g1_kHz'"):
            parse_config_text("g1_kHz = 50\ng1_kHz = 60\n")

    def test_overrides_replace_values(self):
        merged = apply_overrides({"b_dim": "40"}, ["b_dim=20", "level = spin"])
        assert merged == {"b_dim": "20", "level": "spin"}

    def test_override_needs_equals(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["b_dim"])


class TestRunConfig:
    def test_reference_file(self, reference_config):
        config = load_run_config(str(reference_config))
        assert config.n_atoms == 1_000_000
        assert config.t_total_us == pytest.approx(REFERENCE_T)
        assert config.level == LevelKind.TWO_MODE
        assert config.branch == Branch.ATOMIC

    def test_round_trip(self, reference_config):
        config = load_run_config(str(reference_config), ["open_system=true", "level=spin", "n_atoms_model=50"])
        again = build_run_config(parse_config_text(config.to_text()))
        assert again == config

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="omega3_kHz"):
            load_run_config(None, ["omega3_kHz=1"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config file"):
            load_run_config(str(tmp_path / "absent.cfg"))

    def test_both_offsets_rejected(self, reference_config):
        with pytest.raises(ConfigError, match="not both"):
            load_run_config(str(reference_config), ["cavity_offset_kHz=2600"])

    def test_resolve_builds_run_objects(self, reference_config):
        params, schedule, evolve, level = load_run_config(str(reference_config)).resolve()
        assert params.delta_a == pytest.approx(100.0)
        assert schedule.omega2_max == 4000.0
        assert evolve.n_steps == 400
        assert level.b_dim == 40

    def test_resolve_reports_bad_physics(self, reference_config):
        config = load_run_config(str(reference_config), ["delta1_kHz=0"])
        with pytest.raises(ConfigError, match="delta1 must be nonzero"):
            config.resolve()

    def test_modelled_atoms_replace_n_at_spin_level(self, reference_config):
        config = load_run_config(str(reference_config), ["level=spin", "n_atoms_model=50"])
        params, _, _, level = config.resolve()
        assert params.n_atoms == 50
        assert level.n_atoms == 50
        assert params.delta_a == pytest.approx(100.0)

    def test_full_level_atom_cap(self, reference_config):
        config = load_run_config(str(reference_config), ["level=full", "n_atoms_model=5", "cavity_dim=3"])
        with pytest.raises(ConfigError):
            config.resolve()

    def test_transfer_protocol(self, reference_config):
        config = load_run_config(
            str(reference_config), ["protocol=transfer", "cavity_dim=20", "b_dim=20", "n_steps=10"]
        )
        assert config.protocol == Protocol.TRANSFER
        result = execute_run(config)
        assert result.extras["t_star_us"] == pytest.approx(1.0)
        assert result.fidelity_to_target > 0.999


class TestSweepSpec:
    def _base(self):
        return build_run_config(parse_config_text(REFERENCE_CONFIG))

    def test_points_follow_grid(self):
        spec = SweepSpec(parameter="t_total_us", values=[10.0, 20.0, 40.0], base=self._base())
        assert [p.t_total_us for p in spec.points()] == [10.0, 20.0, 40.0]

    def test_integer_parameter(self):
        spec = SweepSpec(parameter="n_atoms", values=[1e4, 1e5], base=self._base())
        assert [p.n_atoms for p in spec.points()] == [10_000, 100_000]

    def test_empty_grid(self):
        with pytest.raises(ValidationError, match="sweep grid is empty"):
            SweepSpec(parameter="t_total_us", values=[], base=self._base())

    def test_unknown_parameter(self):
        with pytest.raises(ValidationError, match="unknown key"):
            SweepSpec(parameter="omega3_kHz", values=[1.0], base=self._base())

import pytest

from groupsbl.arrays import PlanarArray, UniformLinearArray
from groupsbl.configfile import (PRESET_NAMES, build_experiment_config,
                                 load_experiment_config, parse_config, preset)

SAMPLE = """
# experiment description
sweep = snr_db
values = -10, 0, 10
methods = proposed, individual_sbl
n_trials = 5
base_seed = 123
geometry = ula
n_antennas = 16
spacing_over_wavelength = 0.5
n_users = 6
n_groups_true = 2
shared_clusters = 2
individual_clusters = 1
subpaths_per_cluster = 4
angular_spread_deg = 8
t_pilots = 12
n_groups = 3
grid_size = 16
offgrid = true
max_iters = 100
"""


def test_parse_and_build(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(SAMPLE)
    config = load_experiment_config(path)
    assert config.sweep == "snr_db"
    assert config.values == (-10.0, 0.0, 10.0)
    assert config.methods == ("proposed", "individual_sbl")
    assert config.n_trials == 5
    assert isinstance(config.geometry, UniformLinearArray)
    assert config.geometry.n_antennas == 16
    assert config.scenario.n_users == 6
    assert config.scenario.subpaths_per_cluster == 4
    assert config.hyper.n_groups == 3
    assert config.hyper.offgrid_enabled is True
    assert config.hyper.max_iters == 100


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("swep = snr_db\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        load_experiment_config(path)


def test_malformed_line_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("just some words\n")
    with pytest.raises(ValueError, match="expected 'key = value'"):
        parse_config(path)


def test_t_sweep_values_become_integers():
    config = build_experiment_config({"sweep": "t_pilots", "values": "10, 20",
                                      "methods": "genie"})
    assert config.values == (10, 20)
    assert all(isinstance(v, int) for v in config.values)


def test_planar_grid_geometry():
    config = build_experiment_config({
        "geometry": "planar_grid", "planar_nx": "3", "planar_ny": "2",
        "values": "0", "methods": "genie"})
    assert isinstance(config.geometry, PlanarArray)
    assert config.geometry.n_elements == 6


def test_geometry_file(tmp_path):
    geo = tmp_path / "geom.txt"
    geo.write_text("ula 9 0.25\n")
    config = build_experiment_config({
        "geometry": "file", "geometry_file": str(geo),
        "values": "0", "methods": "genie"})
    assert config.geometry.n_antennas == 9


def test_boolean_coercion():
    config = build_experiment_config({"offgrid": "off", "values": "0",
                                      "methods": "genie"})
    assert config.hyper.offgrid_enabled is False
    with pytest.raises(ValueError, match="boolean"):
        build_experiment_config({"offgrid": "maybe", "values": "0",
                                 "methods": "genie"})


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_presets_construct(self, name):
        config = preset(name)
        assert config.values and config.methods
        assert config.n_trials >= 50

    def test_trial_and_thread_overrides(self):
        config = preset("fig2b", n_trials=7, threads=3)
        assert config.n_trials == 7 and config.threads == 3

    def test_pilot_sweep_presets_sweep_pilots(self):
        assert preset("fig2a").sweep == "t_pilots"
        assert preset("fig2b").sweep == "t_pilots"
        assert preset("fig3a").sweep == "snr_db"
        assert preset("fig6").sweep == "n_groups"

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValueError):
            preset("fig9")

import pytest

from landloc.config import ConfigError, SwarmConfig, config_to_dict, load_config, config_from_mapping


def _write(tmp_path, text):
    p = tmp_path / "swarm.toml"
    p.write_text(text)
    return p


def test_load_sections(tmp_path):
    p = _write(tmp_path, """
[swarm]
mission_drones = 8
seed = 3
[channel]
range_noise_sigma = 0.05
[ekf]
process_noise = 1
""")
    cfg = load_config(p, environ={})
    assert cfg.mission_drones == 8 and cfg.seed == 3
    assert cfg.channel.range_noise_sigma == 0.05
    assert cfg.ekf.process_noise == 1.0


def test_env_override(tmp_path):
    p = _write(tmp_path, "[swarm]\nmission_drones = 4\n")
    cfg = load_config(p, environ={"LANDLOC__SWARM__MISSION_DRONES": "8", "LANDLOC__ASL__N_MEAS": "10"})
    assert cfg.mission_drones == 8 and cfg.asl.n_meas == 10


def test_unknown_field(tmp_path):
    with pytest.raises(ConfigError, match="bogus"):
        load_config(_write(tmp_path, "[swarm]\nbogus = 1\n"), environ={})
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(_write(tmp_path, "[nope]\nx = 1\n"), environ={})


def test_bad_type(tmp_path):
    with pytest.raises(ConfigError, match="integer"):
        load_config(_write(tmp_path, "[swarm]\nmission_drones = 'many'\n"), environ={})


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "absent.toml"
    with pytest.raises(ConfigError, match="absent.toml"):
        load_config(missing, environ={})


def test_validation():
    with pytest.raises(ValueError):
        SwarmConfig(target_landings=((0, 0), (1, 0)), takeoff_positions=((0, 0), (1, 0)))
    with pytest.raises(ConfigError):
        config_from_mapping({"power": {"rx_power": 0.001}})


def test_snapshot_roundtrip():
    cfg = SwarmConfig(mission_drones=6, seed=11)
    assert config_from_mapping(config_to_dict(cfg)) == cfg

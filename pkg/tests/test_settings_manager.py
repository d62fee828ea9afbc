import json
from pathlib import Path

import pytest

from errors import ConfigError
from settings_manager import SettingsManager, load_config


def test_default_experiment_values():
    cfg = SettingsManager(None).experiment_config()
    assert cfg.frequency == 997.0
    assert cfg.sample_rate == 44100.0
    assert cfg.spacing == pytest.approx(0.04 * 343.0 / 997.0)
    assert cfg.runs == 5000
    assert cfg.bit_columns() == (12, 16, 20, 24, None)
    assert len(cfg.pattern_specs()) == 12


def test_file_values_override_defaults(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({'runs': 100, 'frequency': 1000, 'spacing': 0.01,
                                'spacing_in_wavelengths': False}))
    manager = SettingsManager(str(path))
    cfg = manager.experiment_config()
    assert cfg.runs == 100
    assert cfg.frequency == 1000.0
    assert cfg.spacing == 0.01


def test_flags_override_file(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({'runs': 100, 'seed': 4}))
    _, cfg = load_config(str(path), {'runs': 7})
    assert cfg.runs == 7
    assert cfg.seed == 4


def test_lenient_manager_ignores_bad_entries(tmp_path, caplog):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({'runs': "many", 'colour': 'blue', 'seed': 2}))
    manager = SettingsManager(str(path))
    assert manager.get('runs') == 5000
    assert manager.get('seed') == 2
    assert "colour" in caplog.text


def test_malformed_file_keeps_defaults(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("{not json")
    assert SettingsManager(str(path)).get_all() == SettingsManager(None).get_all()


@pytest.mark.parametrize("content, key", [
    (json.dumps({'frequncy': 500.0}), 'frequncy'),
    (json.dumps({'bitz': [8]}), 'bitz'),
    (json.dumps({'runs': "many"}), 'runs'),
    (json.dumps({'seed': 1, 'bits': ['sixteen']}), 'bits'),
    ("{not json", 'config'),
    (json.dumps([1, 2]), 'config'),
])
def test_named_file_is_validated_strictly(tmp_path, content, key):
    path = tmp_path / "settings.json"
    path.write_text(content)
    with pytest.raises(ConfigError) as excinfo:
        load_config(str(path))
    assert excinfo.value.key == key


def test_named_file_must_exist(tmp_path):
    with pytest.raises(ConfigError, match="not found") as excinfo:
        load_config(str(tmp_path / "absent.json"))
    assert excinfo.value.key == 'config'


@pytest.mark.parametrize("key, value", [
    ('colour', 'blue'),
    ('runs', 2.5),
    ('bits', ['sixteen']),
    ('include_unquantized', 1),
])
def test_override_errors_name_the_key(key, value):
    manager = SettingsManager(None)
    with pytest.raises(ConfigError) as excinfo:
        manager.apply_overrides({key: value})
    assert excinfo.value.key == key


def test_unsupported_pair_names_it():
    manager = SettingsManager(None)
    manager.apply_overrides({'patterns': ['supercardioid'], 'orders': [4]})
    with pytest.raises(ConfigError, match=r"supercardioid, 4"):
        manager.experiment_config()


@pytest.mark.parametrize("overrides, key", [
    ({'depths_db': [-10.0, 5.0]}, 'depths_db'),
    ({'frequency': 30000.0}, 'frequency'),
    ({'bits': [], 'include_unquantized': False}, 'bits'),
    ({'amplitude': 2.0}, 'amplitude'),
    ({'patterns': ['shotgun']}, 'patterns'),
])
def test_range_checks(overrides, key):
    manager = SettingsManager(None)
    manager.apply_overrides(overrides)
    with pytest.raises(ConfigError) as excinfo:
        manager.experiment_config()
    assert excinfo.value.key == key


def test_set_and_reset():
    manager = SettingsManager(None)
    assert manager.set('runs', 10)
    assert not manager.set('runs', 'ten')
    assert manager.get('runs') == 10
    manager.reset_to_defaults()
    assert manager.get('runs') == 5000


def test_save_keeps_backup(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("{}")
    manager = SettingsManager(str(path))
    manager.set('seed', 9)
    assert manager.save_settings()
    assert (tmp_path / "settings.json.backup").read_text() == "{}"
    assert json.loads(path.read_text())['seed'] == 9


def test_shipped_settings_file_matches_defaults():
    shipped = Path(__file__).resolve().parent.parent / "Config" / "experiment_settings.json"
    assert SettingsManager(str(shipped)).get_all() == SettingsManager(None).get_all()

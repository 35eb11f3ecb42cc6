"""
tests/test_config.py
Tests for pipeline settings (TOML files, dotted overrides) and experiment files.
"""

from pathlib import Path

import pytest

from config.experiment import load_experiment
from config.settings import Settings, load_settings
from main import _overrides
from shared.exceptions import ConfigError, InputMissingError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# ── Settings ───────────────────────────────────────────────────────────────────

@pytest.mark.unit
def test_defaults():
    """Settings defaults carry the canonical windows and thresholds."""
    s = Settings()
    assert s.cohort.min_age == 15 and s.cohort.gap_h == 6.0
    assert (s.soi.abx_window_h, s.soi.culture_window_h) == (72.0, 24.0)
    assert (s.sofa.window_pre_h, s.sofa.window_post_h, s.sofa.delta) == (48.0, 24.0, 2)
    assert s.ingest.lab_join_key == "hadm_id"


@pytest.mark.unit
def test_with_overrides_returns_a_copy():
    """Overrides produce new settings and leave the original alone."""
    base = Settings()
    changed = base.with_overrides({"soi.abx_window_h": 48, "sofa.baseline": "rolling_min"})
    assert changed.soi.abx_window_h == 48.0
    assert changed.sofa.baseline == "rolling_min"
    assert base.soi.abx_window_h == 72.0


@pytest.mark.unit
@pytest.mark.parametrize("key", ["soi", "nosuch.key", "soi.nosuch"])
def test_unknown_override_keys(key):
    """Unknown sections and keys are config errors with exit code 1."""
    with pytest.raises(ConfigError) as info:
        Settings().with_overrides({key: 1})
    assert info.value.exit_code == 1


@pytest.mark.unit
def test_set_values_parse_as_toml_literals():
    """--set values parse as TOML literals; a missing '=' is an error."""
    assert _overrides(["soi.abx_window_h=48", "sofa.baseline=rolling_min", "cohort.min_age = 18"]) == {
        "soi.abx_window_h": 48, "sofa.baseline": "rolling_min", "cohort.min_age": 18,
    }
    with pytest.raises(ConfigError):
        _overrides(["soi.abx_window_h"])


@pytest.mark.unit
def test_shipped_pipeline_settings_load():
    """The shipped pipeline settings equal the defaults."""
    assert load_settings(CONFIGS / "pipeline.toml") == Settings()


@pytest.mark.unit
def test_settings_error_names_key_and_line(tmp_path):
    """A bad value is reported with its dotted key and line number."""
    path = tmp_path / "bad.toml"
    path.write_text("[cohort]\nmin_age = 15\n\n[sofa]\ndelta = 0\n")
    with pytest.raises(ConfigError) as info:
        load_settings(path)
    assert info.value.key == "sofa.delta"
    assert info.value.line == 5
    assert "line 5" in info.value.message


@pytest.mark.unit
def test_settings_file_must_exist(tmp_path):
    """A missing settings file is an input error."""
    with pytest.raises(InputMissingError):
        load_settings(tmp_path / "missing.toml")


@pytest.mark.unit
def test_malformed_toml(tmp_path):
    """Unparseable TOML is a config error."""
    path = tmp_path / "broken.toml"
    path.write_text("[soi\n")
    with pytest.raises(ConfigError):
        load_settings(path)


# ── Experiment files ───────────────────────────────────────────────────────────

@pytest.mark.unit
def test_experiment_paths_resolve_against_the_file(tmp_path):
    """Relative paths in an experiment file resolve against its directory."""
    (tmp_path / "custom.toml").write_text("")
    path = tmp_path / "exp.toml"
    path.write_text(
        'feature_sets = ["dascena", "custom.toml"]\n'
        "seeds = [4]\n"
        "[data]\n"
        'synth = "synth.toml"\n'
        "[settings.soi]\n"
        "abx_window_h = 48\n"
    )
    config = load_experiment(path)

    assert config.data.synth == tmp_path / "synth.toml"
    assert config.feature_sets == ["dascena", str(tmp_path / "custom.toml")]
    assert config.n_cells == 2 * 2 * 2 * 1
    cfg = config.pipeline_settings(Settings())
    assert cfg.soi.abx_window_h == 48.0


@pytest.mark.unit
def test_with_seeds_moves_the_label_seed():
    """Replacing the seeds also moves the label seed to the first one."""
    config = load_experiment(CONFIGS / "smoke.toml").with_seeds([5, 6])
    assert config.seeds == [5, 6]
    assert config.label_seed == 5


@pytest.mark.unit
@pytest.mark.parametrize("body, key", [
    ("[data]\n", "data"),
    ('seeds = []\n[data]\nsynth = "s.toml"\n', "seeds"),
    ('[data]\nsynth = "s.toml"\n[settings.train]\nx = 1\n', "settings"),
    ('[data]\nsynth = "s.toml"\n[split]\nratios = [0.5, 0.5, 0.5]\n', "split.ratios"),
])
def test_invalid_experiment_files(tmp_path, body, key):
    """Invalid experiment files name the offending key."""
    path = tmp_path / "exp.toml"
    path.write_text(body)
    with pytest.raises(ConfigError) as info:
        load_experiment(path)
    assert info.value.key == key


@pytest.mark.unit
@pytest.mark.parametrize("name", ["smoke.toml", "full_grid.toml", "icd_drift.toml"])
def test_shipped_experiments_load(name):
    """Every shipped experiment file loads with at least one cell."""
    assert load_experiment(CONFIGS / name).n_cells >= 1

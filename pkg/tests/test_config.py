import pytest

from engawa.config import (OUTPUT_DIR_VARIABLE, ConfigErrors, DuplicateKey,
                           MissingEnvVarError, MissingKey, RangeError,
                           UnknownKey, config_from_mapping, defaults_document,
                           load_config, load_dotenv_files, parse_config,
                           resolve_output_dir, serialize_config, to_sim_config)
from engawa.core import ConfigError
from engawa.simulator import Girsanov, Scheme

MINIMAL = 'geometry: ball\nhorizon: 1.0\nseed: 0\n'


@pytest.fixture
def no_output_override(monkeypatch):
    # set then delete, so the variable is gone again after the test even if a dotenv file defines it
    monkeypatch.setenv(OUTPUT_DIR_VARIABLE, 'placeholder')
    monkeypatch.delenv(OUTPUT_DIR_VARIABLE)


def issues_of(text):
    with pytest.raises(ConfigErrors) as e:
        parse_config(text)
    return e.value.errors


def test_minimal_document_gets_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.geometry == 'ball'
    assert cfg.dimension == 2
    assert cfg.density == 'uniform'
    assert cfg.dt == 1e-3
    assert cfg.epsilon == 1e-2
    assert cfg.scheme == 'regularized_euler'
    assert cfg.space_dimension == 2


def test_tangential_diffusion_on_an_interval_is_rejected():
    errors = issues_of('geometry: interval\nhorizon: 1.0\nseed: 0\ndelta: 1\n')
    assert len(errors) == 1
    assert isinstance(errors[0], RangeError)
    assert errors[0].key == 'delta'
    assert errors[0].line == 4


def test_duplicate_keys_name_both_lines():
    errors = issues_of(MINIMAL + 'seed: 1\n')
    assert len(errors) == 1
    assert isinstance(errors[0], DuplicateKey)
    assert errors[0].key == 'seed'
    assert errors[0].lines == (3, 4)


def test_unknown_key():
    errors = issues_of(MINIMAL + 'colour: red\n')
    assert isinstance(errors[0], UnknownKey)
    assert errors[0].key == 'colour'
    assert errors[0].line == 4
    assert 'colour (line 4)' in str(errors[0])


def test_missing_keys():
    errors = issues_of('geometry: ball\n')
    assert all(isinstance(e, MissingKey) for e in errors)
    assert {e.key for e in errors} == {'horizon', 'seed'}


def test_every_problem_is_reported():
    errors = issues_of('geometry: ball\nhorizon: -1.0\nseed: 0\ndt: 0\nbogus: 1\n')
    assert {e.key for e in errors} == {'horizon', 'dt', 'bogus'}
    assert {e.key: e.line for e in errors} == {'horizon': 2, 'dt': 4, 'bogus': 5}


@pytest.mark.parametrize('extra,key', [
    ('n_particles: 2\nscheme: time_change\n', 'scheme'),
    ("observables: ['coord:3:1']\n", 'observables'),
    ('start: [[0.1]]\n', 'start'),
    ('epsilon: 2.0\n', 'epsilon'),
    ('martingale_horizon: 2.0\n', 'martingale_horizon'),
    ('schema_version: 2\n', 'schema_version'),
])
def test_cross_field_checks(extra, key):
    errors = issues_of(MINIMAL + extra)
    assert [e.key for e in errors] == [key]


def test_invalid_yaml():
    with pytest.raises(ConfigError) as e:
        parse_config('geometry: [ball\n')
    assert not isinstance(e.value, ConfigErrors)

    with pytest.raises(ConfigError):
        parse_config('- ball\n- interval\n')


def test_round_trip():
    cfg = parse_config(MINIMAL + "n_particles: 2\ndensity: soft\nobservables: ['pairdist2:1:2']\nstart: [[0.1, 0.0], [-0.1, 0.0]]\n")
    assert parse_config(serialize_config(cfg)) == cfg


def test_defaults_document_is_valid():
    cfg = parse_config(defaults_document())
    assert cfg.seed == 0
    assert cfg.histogram_bins == 36


def test_env_substitution(monkeypatch):
    monkeypatch.setenv('ENGAWA_TEST_SEED', '7')
    assert parse_config('geometry: ball\nhorizon: 1.0\nseed: ${env:ENGAWA_TEST_SEED}\n').seed == 7

    monkeypatch.delenv('ENGAWA_TEST_SEED')
    with pytest.raises(MissingEnvVarError):
        parse_config('geometry: ball\nhorizon: 1.0\nseed: ${env:ENGAWA_TEST_SEED}\n')


def test_dotenv_overrides_output_dir(tmp_path, no_output_override):
    cfg = parse_config(MINIMAL + 'output_dir: results\n')
    assert resolve_output_dir(cfg) == 'results'

    (tmp_path / '_ignored.env').write_text(f'{OUTPUT_DIR_VARIABLE}=wrong\n')
    load_dotenv_files(str(tmp_path))
    assert resolve_output_dir(cfg) == 'results'

    (tmp_path / '.env').write_text(f'{OUTPUT_DIR_VARIABLE}={tmp_path / "elsewhere"}\n')
    load_dotenv_files(str(tmp_path))
    assert resolve_output_dir(cfg) == str(tmp_path / 'elsewhere')


def test_load_config(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text(MINIMAL)
    assert load_config(str(path)).horizon == 1.0

    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'run.json'))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.yaml'))


def test_config_from_mapping():
    assert config_from_mapping({'geometry': 'interval', 'horizon': 2.0, 'seed': 1}).space_dimension == 1
    with pytest.raises(ConfigErrors) as e:
        config_from_mapping({'geometry': 'ball'})
    assert {issue.key for issue in e.value.errors} == {'horizon', 'seed'}


def test_to_sim_config():
    cfg = parse_config(MINIMAL + 'beta: 0.0\nscheme: time_change\ndimension: 3\n')
    sim = to_sim_config(cfg)
    assert sim.scheme == Scheme.TIME_CHANGE
    assert sim.girsanov == Girsanov.OFF
    assert sim.geometry.dimension == 3
    assert float(sim.densities.beta[0].value([0.0, 0.0, 1.0])) == pytest.approx(1e-12)

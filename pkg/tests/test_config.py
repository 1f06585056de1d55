import pytest

from core.config import (ExperimentConfig, apply_overrides, config_from_dict, load_config,
                         parse_config)
from core.decorr import Variant
from core.errors import ConfigError

SAMPLE = """\
# soft cca on synthetic views
[model]
embed_dim = 3
hidden = 64, 32

[training]
lr = 0.05
epochs = 2
drop_last = no

[losses]
lambda = 0.5
variant = decov

[data]
source = synth
synth_rho = 0.9, 0.8, 0.3
"""


def test_defaults():
    config = ExperimentConfig()
    assert config.model.embed_dim == 50
    assert config.model.hidden == (500, 300)
    assert config.losses.alpha == 0.9
    assert config.variant == Variant.SDL
    assert config.eval.folds == 5


def test_parse_sample():
    config = parse_config(SAMPLE)
    assert config.model.hidden == (64, 32)
    assert config.training.lr == 0.05
    assert config.training.drop_last is False
    assert config.losses.lam == 0.5
    assert config.variant == Variant.DECOV
    assert config.data.synth_rho == (0.9, 0.8, 0.3)
    assert config.training.batch_size == 100


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("[model]\nembed_dim = 3\nwidth = 4\n")
    assert err.value.section == 'model'
    assert err.value.key == 'width'
    assert err.value.line == 3


def test_unknown_section():
    with pytest.raises(ConfigError) as err:
        parse_config("[model]\nembed_dim = 3\n\n[optimizer]\nlr = 1\n")
    assert err.value.section == 'optimizer'
    assert err.value.line == 4


def test_bad_value():
    with pytest.raises(ConfigError) as err:
        parse_config("[training]\nepochs = many\n")
    assert err.value.line == 2


@pytest.mark.parametrize('text', [
    "[losses]\nalpha = 1.0\n",
    "[losses]\nvariant = whitening\n",
    "[losses]\nlambda = -1\n",
    "[training]\nbatch_size = 1\n",
    "[training]\nmomentum = 1.0\n",
    "[data]\nsynth_rho = 0.5, 1.5\n",
])
def test_validation(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_malformed_file():
    with pytest.raises(ConfigError):
        parse_config("embed_dim = 3\n")


def test_dict_round_trip():
    config = parse_config(SAMPLE)
    snapshot = config.to_dict()
    assert snapshot['losses']['lambda'] == 0.5
    assert snapshot['model']['hidden'] == [64, 32]
    assert config_from_dict(snapshot) == config


def test_overrides():
    config = apply_overrides(ExperimentConfig(), seed=5, out_dir='elsewhere')
    assert config.training.seed == 5
    assert config.output.dir == 'elsewhere'


def test_load_config(tmp_path):
    path = tmp_path / 'exp.ini'
    path.write_text(SAMPLE, encoding='utf-8')
    assert load_config(str(path)).model.embed_dim == 3
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.ini'))

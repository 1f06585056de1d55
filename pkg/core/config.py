"""
Experiment Configuration - INI sections mapped onto typed dataclasses, strict key checking
"""
import configparser
import dataclasses
import logging
import re
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from .decorr import Variant
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class ModelSection:
    embed_dim: int = 50
    hidden: Tuple[int, ...] = (500, 300)
    linear: bool = False
    p: int = 10
    q: int = 10
    fae_hidden: Tuple[int, ...] = (1000, 1000)
    mlp_hidden: Tuple[int, ...] = (500, 300)


@dataclass
class TrainingSection:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 100
    epochs: int = 20
    seed: int = 0
    drop_last: bool = True
    checkpoint_every: int = 0
    reset_sdl_each_epoch: bool = False


@dataclass
class LossSection:
    lam: float = field(default=1.0, metadata={'key': 'lambda'})
    lambda1: float = 1.0
    lambda2: float = 1.0
    alpha: float = 0.9
    variant: str = 'sdl'
    ridge: float = 1e-4


@dataclass
class DataSection:
    source: str = 'mnist'
    mnist_dir: str = 'data/mnist'
    subset: int = 10000
    subset_seed: int = 0
    synth_n: int = 20000
    synth_d1: int = 20
    synth_d2: int = 20
    synth_rho: Tuple[float, ...] = (0.9, 0.7, 0.5)
    synth_seed: int = 0
    heldout_fraction: float = 0.2


@dataclass
class EvalSection:
    folds: int = 5
    classifier_epochs: int = 30
    classifier_lr: float = 0.1
    classifier_l2: float = 1e-4
    oracle: bool = False


@dataclass
class OutputSection:
    dir: str = 'runs/default'


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    losses: LossSection = field(default_factory=LossSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def variant(self) -> Variant:
        return Variant(self.losses.variant)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: {_key_of(f): _jsonable(getattr(section, f.name))
                       for f in dataclasses.fields(section)}
                for name, section in self._sections().items()}

    def _sections(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def _key_of(f: dataclasses.Field) -> str:
    return f.metadata.get('key', f.name)


def _jsonable(value: Any) -> Any:
    return list(value) if isinstance(value, tuple) else value


_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def _convert(raw: Any, annotation: Any) -> Any:
    if annotation is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if annotation is int:
        if isinstance(raw, bool):
            raise ValueError(f"not an integer: {raw!r}")
        return int(str(raw).strip())
    if annotation is float:
        return float(str(raw).strip())
    if annotation is str:
        return str(raw).strip()
    if typing.get_origin(annotation) is tuple:
        item_type = typing.get_args(annotation)[0]
        items = raw if isinstance(raw, (list, tuple)) else [s for s in str(raw).split(',') if s.strip()]
        return tuple(_convert(item, item_type) for item in items)
    raise TypeError(f"unsupported config type {annotation}")


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """1-based line of every key, and of every section header under key ''."""
    lines: Dict[Tuple[str, str], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in '#;':
            continue
        header = re.match(r'^\[([^\]]+)\]', stripped)
        if header:
            section = header.group(1).strip()
            lines[(section, '')] = number
            continue
        if section is not None:
            key = re.split(r'[=:]', stripped, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), number)
    return lines


def _build_section(cls, name: str, values: Dict[str, Any],
                   lines: Dict[Tuple[str, str], int]):
    hints = typing.get_type_hints(cls)
    known = {_key_of(f): f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        f = known.get(key)
        if f is None:
            raise ConfigError("unknown key", section=name, key=key, line=lines.get((name, key)))
        try:
            kwargs[f.name] = _convert(raw, hints[f.name])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value {raw!r}: {e}", section=name, key=key,
                              line=lines.get((name, key)))
    return cls(**kwargs)


def config_from_dict(sections: Dict[str, Dict[str, Any]],
                     lines: Optional[Dict[Tuple[str, str], int]] = None) -> ExperimentConfig:
    lines = lines or {}
    section_types = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}
    built = {}
    for name, values in sections.items():
        if name not in section_types:
            raise ConfigError("unknown section", section=name, line=lines.get((name, '')))
        built[name] = _build_section(section_types[name], name, values, lines)
    config = ExperimentConfig(**built)
    validate_config(config)
    return config


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section='__defaults__')
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}", line=getattr(e, 'lineno', None))
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    return config_from_dict(sections, _key_lines(text))


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    config = parse_config(text)
    logger.info(f"Loaded config from {path}")
    return config


def validate_config(config: ExperimentConfig):
    m, t, l, d, e = config.model, config.training, config.losses, config.data, config.eval

    def require(ok: bool, section: str, key: str, message: str):
        if not ok:
            raise ConfigError(message, section=section, key=key)

    require(m.embed_dim >= 1, 'model', 'embed_dim', "embedding dimension must be positive")
    require(all(h >= 1 for h in m.hidden), 'model', 'hidden', "hidden sizes must be positive")
    require(m.p >= 2 and m.q >= 1, 'model', 'p', "class code needs p >= 2, style code q >= 1")
    require(t.lr > 0, 'training', 'lr', "learning rate must be positive")
    require(0.0 <= t.momentum < 1.0, 'training', 'momentum', "momentum must be in [0, 1)")
    require(t.batch_size >= 2, 'training', 'batch_size', "mini-batch size must be at least 2")
    require(t.epochs >= 1, 'training', 'epochs', "need at least one epoch")
    require(t.seed >= 0, 'training', 'seed', "seed must be nonnegative")
    require(t.checkpoint_every >= 0, 'training', 'checkpoint_every', "must be nonnegative")
    for key in ('lam', 'lambda1', 'lambda2', 'ridge'):
        require(getattr(l, key) >= 0, 'losses', 'lambda' if key == 'lam' else key, "weights must be nonnegative")
    require(0.0 <= l.alpha < 1.0, 'losses', 'alpha', "alpha must be in [0, 1)")
    require(l.variant in {v.value for v in Variant}, 'losses', 'variant',
            f"variant must be one of {sorted(v.value for v in Variant)}")
    require(d.source in ('mnist', 'synth'), 'data', 'source', "source must be mnist or synth")
    require(all(0.0 < r <= 1.0 for r in d.synth_rho), 'data', 'synth_rho', "each rho must be in (0, 1]")
    require(0.0 < d.heldout_fraction < 1.0, 'data', 'heldout_fraction', "must be in (0, 1)")
    require(e.folds >= 2, 'eval', 'folds', "need at least two folds")
    require(e.classifier_lr > 0 and e.classifier_l2 >= 0, 'eval', 'classifier_lr',
            "classifier rates must be positive")


def apply_overrides(config: ExperimentConfig, seed: Optional[int] = None,
                    out_dir: Optional[str] = None) -> ExperimentConfig:
    if seed is not None:
        config = dataclasses.replace(config, training=dataclasses.replace(config.training, seed=seed))
    if out_dir is not None:
        config = dataclasses.replace(config, output=OutputSection(dir=out_dir))
    validate_config(config)
    return config

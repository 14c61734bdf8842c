"""Run configuration: nested dataclasses, JSON files and ``key=value`` overrides."""
from __future__ import annotations

import json
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .audio import PitchConfig, SpectrogramConfig
from .classifier import ClassifierConfig
from .generator import GeneratorConfig, LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    n_per_emotion: int = 100
    speakers: int = 2
    languages: int = 2
    duration: float = 1.0


@dataclass
class DataConfig:
    n_pairs: int = 150          # neutral -> emotional training triples
    n_identity: int = 100       # emotional clip -> itself triples
    gl_iterations: int = 32
    vocode_eval: bool = True    # Griffin-Lim before F0 for PCC


@dataclass
class AblationConfig:
    trials: int = 50
    sample_size: int = 50
    classifier_epochs: int = 20
    generator_epochs: int = 50


@dataclass
class RunConfig:
    seed: int = 0
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    generator: GeneratorConfig = field(default_factory=lambda: GeneratorConfig(width=64, epochs=50, lr=1e-3))
    data: DataConfig = field(default_factory=DataConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    hints = _hints(cls)
    kwargs = {}
    for k, v in data.items():
        t = hints[k]
        sub = _dataclass_of(t)
        if sub is not None and v is not None:
            kwargs[k] = _build(sub, v, f"{where}{k}.")
        else:
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _dataclass_of(t):
    if is_dataclass(t):
        return t
    for arg in typing.get_args(t):
        if is_dataclass(arg):
            return arg
    return None


def from_dict(data: dict) -> RunConfig:
    base = RunConfig().to_dict()
    return _build(RunConfig, _merge(base, data), "")


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def load_config(path=None, overrides: list[str] | tuple = ()) -> RunConfig:
    """Defaults, then the JSON file, then dotted overrides; unknown keys fail."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        keys, value = parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-object")
        node[keys[-1]] = value
    return from_dict(data)


__all__ = ["RunConfig", "CorpusConfig", "DataConfig", "AblationConfig", "ConfigError",
           "load_config", "from_dict", "LossWeights"]

"""Run configuration: a flat ``key = value`` file plus command-line overrides.

Keys are the field names of ModelConfig, TrainConfig, CameraConfig (except
height and width, which follow image_size) and ZeroShotConfig, plus
``preset``, ``data_dir``, ``checkpoint`` and ``output_dir``. Lines starting
with ``#`` are comments. Overrides win over the file; the file wins over the
preset.
"""

import os
import time
import types
import typing
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .camera import CameraConfig
from .errors import ConfigError, InvalidInputError
from .model import ModelConfig, model_preset
from .training import TrainConfig, camera_for
from .zeroshot import ZeroShotConfig

RUNS_DIR = os.environ.get("GMAE_RUNS_DIR", "runs")

_CAMERA_DERIVED = {"height", "width"}
PATH_KEYS = ("data_dir", "checkpoint", "output_dir")

_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "camera": CameraConfig,
    "zeroshot": ZeroShotConfig,
}


def _section_fields(section: str):
    return [f for f in fields(_SECTIONS[section]) if not (section == "camera" and f.name in _CAMERA_DERIVED)]


KEY_SECTION = {f.name: s for s in _SECTIONS for f in _section_fields(s)}
KEY_FIELD = {f.name: f for s in _SECTIONS for f in _section_fields(s)}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    zeroshot: ZeroShotConfig = field(default_factory=ZeroShotConfig)
    preset: str = "desk"
    data_dir: str | None = None
    checkpoint: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        camera_for(self.model, self.camera)

    def to_text(self) -> str:
        """The flat file form; load_run_config on it reproduces this config."""
        lines = [f"preset = {self.preset}"]
        for section in _SECTIONS:
            lines.append(f"\n# {section}")
            values = asdict(getattr(self, section))
            for f in _section_fields(section):
                lines.append(f"{f.name} = {_format(values[f.name])}")
        lines.append("\n# paths")
        for key in PATH_KEYS:
            lines.append(f"{key} = {_format(getattr(self, key))}")
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _is_optional(tp) -> bool:
    return isinstance(tp, types.UnionType) and type(None) in typing.get_args(tp)


def parse_value(key: str, text: str, tp):
    """Convert the string ``text`` to the annotated type ``tp``."""
    text = text.strip()
    try:
        if _is_optional(tp):
            if text.lower() in ("none", ""):
                return None
            inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
            return parse_value(key, text, inner)
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if typing.get_origin(tp) is tuple:
            return tuple(float(v) for v in text.split(","))
        return text
    except ValueError as e:
        raise ConfigError(key, str(e)) from None


def read_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"no such file: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def build_run_config(values: dict) -> RunConfig:
    """RunConfig from a flat mapping of keys to strings or already-typed values."""
    values = dict(values)
    preset = values.pop("preset", "desk")
    sections: dict[str, dict] = {s: {} for s in _SECTIONS}
    paths = {}
    for key, value in values.items():
        if key in PATH_KEYS:
            paths[key] = None if value in (None, "none", "") else str(value)
            continue
        if key not in KEY_SECTION:
            raise ConfigError(key, "unknown configuration key")
        if isinstance(value, str):
            value = parse_value(key, value, KEY_FIELD[key].type)
        sections[KEY_SECTION[key]][key] = value

    model = replace(model_preset(preset), **sections["model"])
    train = TrainConfig(**sections["train"])
    try:
        camera = CameraConfig(height=model.image_size, width=model.image_size, **sections["camera"])
    except InvalidInputError as e:
        raise ConfigError("camera", str(e)) from None
    zeroshot = ZeroShotConfig(**sections["zeroshot"])
    return RunConfig(model=model, train=train, camera=camera, zeroshot=zeroshot, preset=preset, **paths)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """
    Merge a config file (optional) with overrides and validate the result.

    Overrides whose value is None are ignored, so argparse namespaces with
    unset flags can be passed straight through.
    """
    values = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_run_config(values)


def make_run_dir(seed: int, root=None) -> Path:
    """New directory ``<root>/<YYYYmmdd-HHMMSS>_seed<seed>``."""
    root = Path(root or RUNS_DIR)
    run_dir = root / f"{time.strftime('%Y%m%d-%H%M%S')}_seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_config(run_dir, config: RunConfig) -> Path:
    path = Path(run_dir) / "config.txt"
    path.write_text(config.to_text())
    return path

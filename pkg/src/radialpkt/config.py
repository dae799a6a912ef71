"""Flat ``key = value`` run configuration with typed defaults."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Key:
    type: type
    default: object
    help: str


KEYS: dict[str, Key] = {
    "data.n_subjects": Key(int, 128, "number of phantom subjects to simulate"),
    "data.size": Key(int, 64, "image matrix size (pixels)"),
    "data.n_readout": Key(int, 128, "samples per spoke, including 2x readout oversampling"),
    "data.n_coils": Key(int, 4, "receiver coils per subject"),
    "data.n_spokes": Key(int, 200, "golden-angle spokes acquired per subject"),
    "data.window": Key(int, 100, "sliding-window length in spokes (must be 4 * model.L_in)"),
    "data.step": Key(int, 50, "sliding-window step in spokes"),
    "data.split": Key(str, "0.75:0.125:0.125", "train:val:test fractions over subjects"),
    "data.min_ellipses": Key(int, 4, "fewest ellipses per phantom"),
    "data.max_ellipses": Key(int, 12, "most ellipses per phantom"),
    "data.phase_mode": Key(str, "smooth-polynomial", "phantom phase model"),
    "model.d_model": Key(int, 256, "token width (2 * data.n_readout)"),
    "model.n_stacks": Key(int, 2, "encoder and decoder stacks"),
    "model.n_heads": Key(int, 4, "attention heads"),
    "model.d_k": Key(int, 64, "key/value width per head"),
    "model.d_ff": Key(int, 1024, "feed-forward hidden width"),
    "model.dropout": Key(float, 0.1, "dropout rate"),
    "model.L_in": Key(int, 25, "acquired spokes per window (input length)"),
    "optim.lr": Key(float, 2e-4, "initial Adam learning rate"),
    "optim.beta1": Key(float, 0.9, "Adam beta1"),
    "optim.beta2": Key(float, 0.98, "Adam beta2"),
    "optim.eps": Key(float, 1e-9, "Adam epsilon"),
    "optim.batch_size": Key(int, 16, "sequences per optimizer step"),
    "optim.epochs": Key(int, 100, "maximum training epochs"),
    "optim.lr_patience": Key(int, 5, "stagnant validation evaluations before halving the learning rate"),
    "optim.lr_factor": Key(float, 0.5, "learning-rate reduction factor on plateau"),
    "optim.early_stop": Key(int, 15, "stagnant validation evaluations before stopping"),
    "run.seed": Key(int, 0, "master random seed"),
    "run.threads": Key(int, 1, "torch intra-op threads (1 = deterministic)"),
}


def _parse(key: str, raw: str):
    spec = KEYS[key]
    try:
        return spec.type(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {spec.type.__name__}") from exc


class Config(dict):
    """Resolved configuration: every known key present, unknown keys rejected."""

    def __init__(self, values: dict | None = None):
        super().__init__({k: v.default for k, v in KEYS.items()})
        for k, v in (values or {}).items():
            self[k] = v

    def __setitem__(self, key, value):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str) and KEYS[key].type is not str:
            value = _parse(key, value)
        elif KEYS[key].type is float and isinstance(value, int):
            value = float(value)
        elif not isinstance(value, KEYS[key].type):
            raise ConfigError(f"{key}: expected {KEYS[key].type.__name__}, got {value!r}")
        super().__setitem__(key, value)

    def update(self, other=(), **kw):
        for k, v in dict(other, **kw).items():
            self[k] = v

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.items() if k.startswith(p)}

    def split_fractions(self) -> tuple[float, float, float]:
        parts = self["data.split"].split(":")
        try:
            fr = tuple(float(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"data.split: malformed {self['data.split']!r}") from exc
        if len(fr) != 3:
            raise ConfigError("data.split needs three fields train:val:test")
        return fr

    def dumps(self) -> str:
        return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in sorted(self.items()))

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())


def parse_config(text: str) -> Config:
    cfg = Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key] = value
    return cfg


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def describe_keys() -> str:
    return "\n".join(f"  {k} = {v.default}  ({v.help})" for k, v in KEYS.items())

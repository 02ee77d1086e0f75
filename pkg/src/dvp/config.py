"""Training configuration and its line-oriented ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    pretrain_steps: int = 5000
    full_steps: int = 3000
    batch_size: int = 16
    crop_size: int = 48
    lr_schedule: list[tuple[int, float]] = field(
        default_factory=lambda: [(0, 1e-3), (6500, 1e-4), (7500, 5e-5)])
    alpha_pretrain: float = 1.0
    alpha_range: tuple[float, float] = (0.1, 0.5)
    gamma: float = 1.0
    upsilon: float = 0.01
    s2_delay: int = 5
    beta_freeze_steps: int = 500
    K: int = 2
    beta_init: list[float] = field(default_factory=lambda: [0.02, 0.0])
    eps_var: float = 1e-8
    seed: int = 0
    depth: int = 7
    channels: int = 32
    noise_kind: str = "gaussian"
    noise_sigma: float = 25 / 255
    noise_lambda: float = 1 / 60
    dataset: str = ""
    checkpoint_every: int = 0
    log_every: int = 1

    def validate(self) -> None:
        for name in ("batch_size", "crop_size", "s2_delay", "K", "depth", "channels", "log_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("pretrain_steps", "full_steps", "beta_freeze_steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        lo, hi = self.alpha_range
        if not 0 < lo <= hi:
            raise ConfigError("alpha_range must satisfy 0 < lo <= hi")
        if not self.alpha_pretrain > 0:
            raise ConfigError("alpha_pretrain must be positive")
        if not self.lr_schedule or self.lr_schedule[0][0] != 0:
            raise ConfigError("lr_schedule must start at step 0")
        steps = [s for s, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("lr_schedule steps must be increasing")
        if len(self.beta_init) != self.K:
            raise ConfigError(f"f.beta has {len(self.beta_init)} coefficients but f.K = {self.K}")
        if self.gamma < 0 or self.upsilon < 0:
            raise ConfigError("gamma and upsilon must be non-negative")
        if self.noise_kind not in ("gaussian", "poisson", "none"):
            raise ConfigError(f"unknown noise.kind {self.noise_kind!r}")

    def lr_at(self, step: int) -> float:
        lr = self.lr_schedule[0][1]
        for s, rate in self.lr_schedule:
            if step >= s:
                lr = rate
        return lr

    @property
    def total_steps(self) -> int:
        return self.pretrain_steps + self.full_steps


# file key -> dataclass field
_KEYS = {
    "pretrain_steps": "pretrain_steps",
    "full_steps": "full_steps",
    "batch_size": "batch_size",
    "crop_size": "crop_size",
    "lr_schedule": "lr_schedule",
    "alpha_pretrain": "alpha_pretrain",
    "alpha_range": "alpha_range",
    "gamma": "gamma",
    "upsilon": "upsilon",
    "s2_delay": "s2_delay",
    "beta_freeze_steps": "beta_freeze_steps",
    "f.K": "K",
    "f.beta": "beta_init",
    "f.eps_var": "eps_var",
    "seed": "seed",
    "depth": "depth",
    "channels": "channels",
    "noise.kind": "noise_kind",
    "noise.sigma": "noise_sigma",
    "noise.lambda": "noise_lambda",
    "dataset": "dataset",
    "checkpoint_every": "checkpoint_every",
    "log_every": "log_every",
}
_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _parse_value(name: str, text: str):
    text = text.strip()
    if name == "lr_schedule":
        pairs = []
        for item in text.split(","):
            step, rate = item.split(":")
            pairs.append((int(step), float(rate)))
        return pairs
    if name == "alpha_range":
        lo, hi = (float(v) for v in text.split(","))
        return (lo, hi)
    if name == "beta_init":
        return [float(v) for v in text.split(",")]
    if name in ("dataset", "noise_kind"):
        return text
    default = getattr(TrainConfig(), name)
    if isinstance(default, int):
        return int(text)
    return float(text)


def _format_value(value) -> str:
    if isinstance(value, list) and value and isinstance(value[0], tuple):
        return ",".join(f"{s}:{r!r}" for s, r in value)
    if isinstance(value, (list, tuple)):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name = _KEYS[key]
        try:
            setattr(cfg, name, _parse_value(name, value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    cfg.validate()
    return cfg


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{key} = {_format_value(getattr(cfg, name))}\n" for key, name in _KEYS.items())


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)


def desk_profile() -> TrainConfig:
    """Reduced budget that keeps every mechanism of the full schedule."""
    return TrainConfig()


def paper_profile() -> TrainConfig:
    return TrainConfig(
        pretrain_steps=200_000, full_steps=60_000, batch_size=128, crop_size=40,
        lr_schedule=[(0, 1e-3), (220_000, 1e-4), (240_000, 5e-5)],
        upsilon=5e-4, beta_freeze_steps=6000, depth=17, channels=64,
    )


PROFILES = {"desk": desk_profile, "paper": paper_profile}

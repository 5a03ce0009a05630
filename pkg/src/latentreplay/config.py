"""Run configuration: key=value text format with documented defaults.

One `key = value` pair per line, '#' starts a comment, blank lines are
ignored. Keys are dotted and flat (no sections). Unknown keys, type
mismatches, and constraint violations raise ConfigError naming the key
and the line it was set on.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError
from .network import NetConfig


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/latest"

    # dataset
    dataset_kind: str = "synthetic"  # synthetic | idx | cifar-bin
    dataset_path: str = ""
    dataset_labels_path: str = ""  # idx only: separate labels file
    dataset_classes: int = 10
    dataset_per_class: int = 100
    dataset_test_per_class: int = 20
    dataset_noise: float = 0.25
    class_order_seed: int = 0

    # task split
    split_first_classes: int = 2
    split_steps: int = 4

    # network
    net_num_blocks: int = 3
    net_channels: tuple = (8, 16, 32)
    net_in_shape: tuple = (3, 16, 16)
    net_replay_block: int = 2

    # step-1 offline training
    offline_epochs: int = 12
    offline_lr: float = 0.01
    offline_momentum: float = 0.9
    offline_batch_size: int = 16
    offline_augment: bool = True

    # channel compressor
    acae_latent_channels: int = 8
    acae_epochs: int = 40
    acae_lr: float = 1e-2
    acae_batch_size: int = 32
    acae_use_ce: bool = True

    # product quantizer
    pq_s: int = 4
    pq_k: int = 256
    pq_iters: int = 25

    # replay memory
    reservoir_capacity: int = 500

    # online phase
    online_rehearsal_n: int = 8
    online_lr: float = 0.01
    online_momentum: float = 0.9
    online_eval_every: int = 0  # 0: evaluate at task boundaries only
    online_crop_min_area: float = 0.64
    online_crop_max_area: float = 1.0
    online_augment: bool = True
    online_sample_with_replacement: bool = False

    def net_config(self) -> NetConfig:
        return NetConfig(
            num_blocks=self.net_num_blocks,
            channels=tuple(self.net_channels),
            in_shape=tuple(self.net_in_shape),
            num_classes=self.dataset_classes,
            replay_block=self.net_replay_block,
        )


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(raw)


def _parse_int_tuple(raw: str) -> tuple:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


_PARSERS = {int: int, float: float, str: str, bool: _parse_bool, tuple: _parse_int_tuple}
_TYPE_NAMES = {int: "integer", float: "number", str: "string", bool: "boolean", tuple: "integer list"}

# dotted config key -> (dataclass field, python type)
KEYS: dict[str, tuple[str, type]] = {}
for f in fields(RunConfig):
    prefixes = ("dataset_", "split_", "net_", "offline_", "acae_", "pq_", "online_", "reservoir_")
    for p in prefixes:
        if f.name.startswith(p):
            key = p[:-1] + "." + f.name[len(p):]
            break
    else:
        key = f.name
    KEYS[key] = (f.name, f.type if isinstance(f.type, type) else type(getattr(RunConfig(), f.name)))


def parse_config(text: str) -> RunConfig:
    """Parse key=value text into a validated RunConfig."""
    cfg = RunConfig()
    lines_set: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        field_name, typ = KEYS[key]
        try:
            parsed = _PARSERS[typ](value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: {key} expects {_TYPE_NAMES[typ]}, got {value!r}"
            ) from None
        setattr(cfg, field_name, parsed)
        lines_set[key] = lineno
    validate_config(cfg, lines_set)
    return cfg


def _where(key: str, lines_set: dict[str, int]) -> str:
    return f"line {lines_set[key]}" if key in lines_set else "default"


def validate_config(cfg: RunConfig, lines_set: dict[str, int] | None = None) -> None:
    """Cross-field constraint checks; errors name every key involved."""
    lines_set = lines_set or {}

    def where(key: str) -> str:
        return _where(key, lines_set)

    if cfg.dataset_kind not in ("synthetic", "idx", "cifar-bin"):
        raise ConfigError(
            f"dataset.kind ({where('dataset.kind')}) must be synthetic, idx, or cifar-bin"
        )
    if cfg.acae_latent_channels % cfg.pq_s != 0:
        raise ConfigError(
            f"acae.latent_channels = {cfg.acae_latent_channels} ({where('acae.latent_channels')}) "
            f"is not divisible by pq.s = {cfg.pq_s} ({where('pq.s')})"
        )
    if not (1 <= cfg.pq_k <= 256):
        raise ConfigError(f"pq.k = {cfg.pq_k} ({where('pq.k')}) must be in 1..256")
    if cfg.split_first_classes < 1 or cfg.split_first_classes >= cfg.dataset_classes:
        raise ConfigError(
            f"split.first_classes = {cfg.split_first_classes} ({where('split.first_classes')}) "
            f"must be in 1..{cfg.dataset_classes - 1} (dataset.classes, {where('dataset.classes')})"
        )
    rest = cfg.dataset_classes - cfg.split_first_classes
    if cfg.split_steps < 1 or rest % cfg.split_steps != 0:
        raise ConfigError(
            f"split.steps = {cfg.split_steps} ({where('split.steps')}) must divide the "
            f"{rest} classes left after split.first_classes ({where('split.first_classes')})"
        )
    if not (0.0 < cfg.online_crop_min_area <= cfg.online_crop_max_area <= 1.0):
        raise ConfigError(
            f"online.crop_min_area ({where('online.crop_min_area')}) and online.crop_max_area "
            f"({where('online.crop_max_area')}) must satisfy 0 < min <= max <= 1"
        )
    try:
        cfg.net_config().validate()
    except ConfigError as err:
        raise ConfigError(f"network settings: {err}") from None
    feat = cfg.net_channels[cfg.net_replay_block - 1]
    if cfg.acae_latent_channels >= feat:
        raise ConfigError(
            f"acae.latent_channels = {cfg.acae_latent_channels} ({where('acae.latent_channels')}) "
            f"must be below the replay-block channel count {feat} "
            f"(net.channels, {where('net.channels')})"
        )


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig as parseable key=value text (all keys, sorted)."""
    out = []
    for key in sorted(KEYS):
        field_name, typ = KEYS[key]
        value = getattr(cfg, field_name)
        if typ is tuple:
            rendered = ", ".join(str(v) for v in value)
        elif typ is bool:
            rendered = "true" if value else "false"
        else:
            rendered = str(value)
        out.append(f"{key} = {rendered}")
    return "\n".join(out) + "\n"

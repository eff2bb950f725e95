"""Flat key=value run configuration, validation and hashing.

Config files are plain text, one `key=value` per line, '#' comments.
Unknown keys are rejected. The config hash (sha256 over the canonical
sorted key=value rendering of every effective setting, defaults included)
binds reports and CSV outputs to their exact inputs.

A config is rejected when its thresholds leave no room for security:
the error threshold must stay below the minimal dishonest error at the
loss threshold, computed for the configured knowledge model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .adversary import Knowledge, parse_strategy
from .protocol import VerificationPolicy
from .quantum import ChannelModel
from .security import PerQubitGame, optimal_attack_error


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    seed: int = 1
    mode: str = "inproc"  # or "socket"
    n_per_bit: int = 100
    tag_bits: int = 32
    error_threshold: float = 0.035
    loss_threshold: float = 0.30
    channel_loss: float = 0.224
    channel_flip_hv: float = 0.0145
    channel_flip_da: float = 0.0328
    channel_multi: float = 0.0676
    client_id: str = "client-1"
    merchant_0: str = "M0"
    merchant_1: str = "M1"
    mac_slots: int = 4
    pad_bytes: int = 0
    knowledge: str = "insider"  # attack capability model
    audit_knowledge: str = "outsider"  # game model behind threshold checks
    strategy: str = "intermediate(angle=22.5)"
    region_loss_min: float = 0.0
    region_loss_max: float = 0.5
    region_points: int = 11
    angle_step: float = 0.25
    game_multi: float = field(default=-1.0)  # -1 -> follow channel_multi

    @property
    def token_length(self) -> int:
        return self.n_per_bit * self.tag_bits

    def policy(self) -> VerificationPolicy:
        return VerificationPolicy(
            error_threshold=self.error_threshold,
            loss_threshold=self.loss_threshold,
            n_per_bit=self.n_per_bit,
            tag_bits=self.tag_bits,
        )

    def channel(self) -> ChannelModel:
        return ChannelModel(
            loss_prob=self.channel_loss,
            flip_prob_hv=self.channel_flip_hv,
            flip_prob_da=self.channel_flip_da,
            multi_prob=self.channel_multi,
        )

    def game(self) -> PerQubitGame:
        """Audit game: the model the issuer certifies its thresholds against."""
        multi = self.channel_multi if self.game_multi < 0 else self.game_multi
        return PerQubitGame(knowledge=Knowledge.parse(self.audit_knowledge), multi_prob=multi)

    def canonical_text(self) -> str:
        pairs = []
        for f in fields(self):
            pairs.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(sorted(pairs)) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


_INT_KEYS = {"seed", "n_per_bit", "tag_bits", "mac_slots", "pad_bytes", "region_points"}
_FLOAT_KEYS = {
    "error_threshold",
    "loss_threshold",
    "channel_loss",
    "channel_flip_hv",
    "channel_flip_da",
    "channel_multi",
    "region_loss_min",
    "region_loss_max",
    "angle_step",
    "game_multi",
}


def parse_config(text: str) -> RunConfig:
    values: dict[str, object] = {}
    known = {f.name for f in fields(RunConfig)} | {"lambda"}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key == "lambda":
            values[key] = int(value)
        else:
            values[key] = value
    lam = values.pop("lambda", None)
    cfg = RunConfig(**values)  # type: ignore[arg-type]
    if lam is not None and lam != cfg.token_length:
        raise ConfigError(
            f"lambda={lam} inconsistent with n_per_bit*tag_bits={cfg.token_length}"
        )
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Raise ConfigError on structural or security-threshold violations."""
    try:
        policy = cfg.policy()
        cfg.channel()
        game = cfg.game()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.mode not in ("inproc", "socket"):
        raise ConfigError(f"mode must be inproc or socket, not {cfg.mode!r}")
    if cfg.mac_slots < 1:
        raise ConfigError("mac_slots must be >= 1")
    if cfg.tag_bits not in (8, 16, 32, 64):
        raise ConfigError("tag_bits must be one of 8, 16, 32, 64")
    try:
        parse_strategy(cfg.strategy)
    except ValueError as exc:
        raise ConfigError(f"bad strategy spec: {exc}") from exc
    try:
        Knowledge.parse(cfg.knowledge)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    e_d = optimal_attack_error(cfg.loss_threshold, game, cfg.angle_step).min_error
    if policy.error_threshold >= e_d:
        raise ConfigError(
            f"error_threshold={policy.error_threshold} leaves no security margin: "
            f"minimal dishonest error at loss_threshold={cfg.loss_threshold} is {e_d:.5f} "
            f"({cfg.audit_knowledge} audit model)"
        )


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    validate_config(cfg)
    return cfg

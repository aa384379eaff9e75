"""Training configuration and the weight-continuation schedule."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .autoencoder import DEFAULT_HIDDEN, DEFAULT_LATENT
from .errors import ConfigError

CONFIG_VERSION = 1

# loss/strategy toggles for the ablation rows: A drops the structure
# losses, B the clustering loss, C weight continuation, D alternation
ABLATIONS = {
    "full": {},
    "no-structure": {"use_lis": False, "use_rank": False, "use_align": False},
    "no-cluster": {"use_cluster": False},
    "no-continuation": {"weight_continuation": False},
    "no-alternating": {"alternating": False},
    "sep-baseline": {"use_rank": False, "use_sep": True},
}


@dataclass(frozen=True)
class TrainConfig:
    n_clusters: int = 10
    epochs: int = 300
    batch: int = 256
    lr: float = 1e-3
    k: int = 5
    kappa: float = 3.0
    ramp_end_epoch: int = 150
    alpha_start: float = 0.1
    beta_end: float = 1.0
    inner_l2_steps: int = 1
    seed: int = 0
    hidden: tuple = DEFAULT_HIDDEN
    latent_dim: int = DEFAULT_LATENT
    pretrain_epochs: int = 100
    pretrain_sigma: float = 0.2
    pretrain_batch: int = 256
    pretrain_lr: float = 1e-3
    use_cluster: bool = True
    use_lis: bool = True
    use_rank: bool = True
    use_align: bool = True
    use_sep: bool = False
    weight_continuation: bool = True
    alternating: bool = True
    assign_by: str = "p"
    per_sample: bool = True
    early_stop: bool = False
    early_stop_tol: float = 0.001
    early_stop_patience: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        positive = ("n_clusters", "epochs", "batch", "lr", "k", "kappa", "ramp_end_epoch",
                    "inner_l2_steps", "latent_dim", "pretrain_epochs", "pretrain_batch", "pretrain_lr")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_clusters < 2:
            raise ConfigError("n_clusters must be at least 2")
        if self.alpha_start < 0 or self.beta_end < 0 or self.pretrain_sigma < 0:
            raise ConfigError("alpha_start, beta_end and pretrain_sigma must be non-negative")
        if self.ramp_end_epoch > self.epochs:
            raise ConfigError(f"ramp_end_epoch {self.ramp_end_epoch} exceeds epochs {self.epochs}")
        if self.assign_by not in ("p", "q"):
            raise ConfigError(f"assign_by must be 'p' or 'q', got {self.assign_by!r}")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be positive: {self.hidden}")

    def with_ablation(self, name: str) -> "TrainConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        return replace(self, **ABLATIONS[name])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def to_json(self) -> str:
        return json.dumps({"version": CONFIG_VERSION, **self.to_dict()}, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"config version {version} not supported (expected {CONFIG_VERSION})")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


def schedule(epoch: int, config: TrainConfig):
    """Loss weights ``(alpha, beta)`` for ``epoch``.

    With weight continuation, alpha falls linearly from ``alpha_start`` to
    0 and beta rises from 0 to ``beta_end`` over epochs
    [0, ramp_end_epoch]; both stay flat afterwards. Without it they are
    held at ``alpha_start`` and ``beta_end``.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if not config.weight_continuation:
        return config.alpha_start, config.beta_end
    frac = epoch / config.ramp_end_epoch
    return config.alpha_start * max(0.0, 1.0 - frac), config.beta_end * min(1.0, frac)

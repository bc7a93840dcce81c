from dataclasses import dataclass, fields

from multifit.exception import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    """One-cycle cosine schedule over ``total_steps`` optimizer steps."""

    total_steps: int
    lr_max: float
    pct_warmup: float = 0.1
    div_start: float = 25.0
    div_final: float = 1e4
    mom_max: float = 0.95
    mom_min: float = 0.85

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.lr_max <= 0:
            raise ConfigError(f"lr_max must be > 0, got {self.lr_max}")
        if not 0.0 < self.pct_warmup < 1.0:
            raise ConfigError(f"pct_warmup must be in (0, 1), got {self.pct_warmup}")
        if self.div_start <= 1 or self.div_final <= 1:
            raise ConfigError(f"div factors must be > 1, got {self.div_start} and {self.div_final}")
        for name in ("mom_max", "mom_min"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {getattr(self, name)}")


@dataclass(frozen=True)
class TrainConfig:
    bptt: int = 70
    lm_batch: int = 50
    clf_batch: int = 18
    epochs_pretrain: int = 10
    epochs_finetune: int = 20
    epochs_classifier: int = 8
    lr_pretrain: float = 5e-3
    lr_finetune: float = 2e-3
    lr_classifier: float = 1e-2
    weight_decay: float = 0.01
    label_smoothing: float = 0.1
    disc_factor: float = 2.6
    dropout_pretrain: float = 0.0
    dropout_finetune: float = 0.3
    dropout_classifier: float = 0.5
    clip: float = 0.25
    beta2: float = 0.99
    adam_eps: float = 1e-8
    valid_fraction: float = 0.05
    pct_warmup: float = 0.1
    div_start: float = 25.0
    div_final: float = 1e4
    mom_max: float = 0.95
    mom_min: float = 0.85

    def __post_init__(self):
        for name in ("bptt", "lm_batch", "clf_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("epochs_pretrain", "epochs_finetune", "epochs_classifier"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.disc_factor < 1.0:
            raise ConfigError(f"disc_factor must be >= 1, got {self.disc_factor}")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ConfigError(f"valid_fraction must be in [0, 1), got {self.valid_fraction}")
        for f in fields(self):
            if f.name.startswith(("lr_", "dropout_")) and getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {getattr(self, f.name)}")

    def schedule(self, total_steps: int, lr_max: float) -> ScheduleConfig:
        return ScheduleConfig(
            total_steps=total_steps,
            lr_max=lr_max,
            pct_warmup=self.pct_warmup,
            div_start=self.div_start,
            div_final=self.div_final,
            mom_max=self.mom_max,
            mom_min=self.mom_min,
        )

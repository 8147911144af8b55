"""Learning-rate schedules: sequential per-group linear warmup followed by
reduce-on-plateau."""

from __future__ import annotations

from dataclasses import dataclass, field


def warmup_multiplier(step: int, spans, group: int) -> float:
    """Linear 0 -> 1 ramp for one parameter group.

    Groups ramp one after another: group g starts after all earlier spans
    completed. `step` counts optimizer steps starting at 1 for the first
    step, so a span of 700 reaches exactly 0.5 at step 350 and 1 at 700.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    start = sum(spans[:group])
    span = spans[group]
    if span <= 0:
        return 1.0
    return min(1.0, max(0.0, (step - start) / span))


@dataclass
class PlateauScheduler:
    """Reduce-on-plateau state machine.

    Tracks the best (strictly lowest) validation metric; after `patience`
    consecutive non-improving evaluations the multiplier shrinks by
    `factor`, then `cooldown` evaluations pass without counting.
    """

    factor: float = 0.6
    patience: int = 25
    cooldown: int = 20
    best: float | None = None
    num_bad: int = 0
    cooldown_remaining: int = 0
    multiplier: float = 1.0
    num_reductions: int = 0

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"factor must be in (0, 1), got {self.factor}")
        if self.patience < 0 or self.cooldown < 0:
            raise ValueError("patience and cooldown must be >= 0")

    def step(self, metric: float) -> bool:
        """Record one validation metric; returns True when a reduction fires."""
        if self.best is None or metric < self.best:
            self.best = metric
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.cooldown_remaining > 0:
            self.cooldown_remaining -= 1
            self.num_bad = 0
            return False
        if self.num_bad > self.patience:
            self.multiplier *= self.factor
            self.num_reductions += 1
            self.cooldown_remaining = self.cooldown
            self.num_bad = 0
            return True
        return False

    def state(self) -> dict:
        return {
            "factor": self.factor,
            "patience": self.patience,
            "cooldown": self.cooldown,
            "best": self.best,
            "num_bad": self.num_bad,
            "cooldown_remaining": self.cooldown_remaining,
            "multiplier": self.multiplier,
            "num_reductions": self.num_reductions,
        }

    @classmethod
    def from_state(cls, d: dict) -> "PlateauScheduler":
        return cls(**d)


def lr_at(step: int, *, base_lr: float, warmup_spans, group: int = 0,
          plateau_multiplier: float = 1.0) -> float:
    """Learning rate of one parameter group at an optimizer step."""
    return base_lr * warmup_multiplier(step, tuple(warmup_spans), group) * plateau_multiplier


@dataclass
class GroupedWarmup:
    """Finetuning warmup over three nested parameter groups, ramped in order:
    batch-norm parameters, then newly initialized parameters, then everything.

    A parameter's multiplier is the max over the groups containing it, which
    equals the ramp of the earliest group it belongs to.
    """

    spans: tuple = (700, 700, 350)
    bn_names: frozenset = field(default_factory=frozenset)
    new_names: frozenset = field(default_factory=frozenset)

    def group_of(self, name: str) -> int:
        if name in self.bn_names:
            return 0
        if name in self.new_names:
            return 1
        return 2

    def multiplier(self, name: str, step: int) -> float:
        return warmup_multiplier(step, self.spans, self.group_of(name))

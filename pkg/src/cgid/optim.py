"""SGD with momentum, weight decay, and a warm-up + cosine schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError


@dataclass
class ScheduleConfig:
    peak_lr: float
    total_steps: int
    warmup_ratio: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1.5e-4
    shape: str = "warmup_cosine"  # or "constant"


@dataclass
class SgdState:
    schedule: ScheduleConfig
    step: int = 0
    velocity: dict = field(default_factory=dict)


def lr_at(step, schedule):
    """Learning rate at an integer step.

    Linear ramp 0 -> peak over the warm-up fraction, then cosine decay
    peak -> 0 over the remainder.
    """
    total = schedule.total_steps
    if step < 0 or step > total:
        raise ContractError(f"step {step} outside [0, {total}]")
    if schedule.shape == "constant":
        return schedule.peak_lr
    if total == 0:
        return 0.0
    warm = schedule.warmup_ratio * total
    if step <= warm:
        if warm == 0.0:
            return schedule.peak_lr
        return schedule.peak_lr * step / warm
    frac = (step - warm) / (total - warm)
    return schedule.peak_lr * 0.5 * (1.0 + np.cos(np.pi * frac))


def sgd_step(params, grads, state, frozen=()):
    """One momentum-SGD update, in place.

    v <- momentum * v + (g + wd * p);  p <- p - lr * v. Parameters listed in
    ``frozen`` are skipped entirely.
    """
    sched = state.schedule
    state.step += 1
    lr = lr_at(min(state.step, sched.total_steps), sched)
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, want {p.shape}")
        if p.size == 0:
            continue
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocity[name] = v
        np.multiply(v, sched.momentum, out=v)
        v += g + sched.weight_decay * p
        p -= lr * v
    return params, state

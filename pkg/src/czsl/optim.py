"""Adam, the z-step inner-loop operator, and the Reptile outer update.

Training treats parameters as flat vectors. One meta-step is: adapt a copy
of theta for ``inner_steps`` optimizer steps on one batch (the inner
loop), then feed the difference (theta - theta_adapted) to the outer
optimizer as a pseudo-gradient. The outer learning rate decays linearly
to zero across epochs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Objective = Callable[[np.ndarray], tuple]  # theta -> (loss, grad)


@dataclass
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n: int, dtype=np.float64) -> "AdamState":
        return cls(m=np.zeros(n, dtype=dtype), v=np.zeros(n, dtype=dtype))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; mutates state, returns new params."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("adam_step shape mismatch")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class MetaSchedule:
    """Learning-rate and step-count schedule for meta-training.

    Outer lr decays as meta_lr0 * (1 - e/(epochs-1)), reaching 0 on the
    last epoch; the inner loop runs inner_steps optimizer steps at the
    constant inner_lr. inner_opt/outer_opt switch between "adam" and
    plain gradient steps ("sgd" / "plain"), the latter mainly for the
    algebraic identities exercised in tests.
    """

    meta_lr0: float = 0.001
    inner_lr: float = 0.0001
    inner_steps: int = 5
    epochs: int = 200
    inner_opt: str = "adam"  # adam | sgd
    outer_opt: str = "adam"  # adam | plain

    def __post_init__(self):
        if self.epochs < 1 or self.inner_steps < 0:
            raise ValueError("epochs must be >= 1 and inner_steps >= 0")
        if self.inner_opt not in ("adam", "sgd"):
            raise ValueError("inner_opt must be adam or sgd")
        if self.outer_opt not in ("adam", "plain"):
            raise ValueError("outer_opt must be adam or plain")


def meta_lr(epoch: int, sched: MetaSchedule) -> float:
    """Linearly decayed outer learning rate; exactly 0 at the final epoch."""
    if not 0 <= epoch < sched.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {sched.epochs})")
    if sched.epochs == 1:
        return sched.meta_lr0
    return sched.meta_lr0 * max(0.0, 1.0 - epoch / (sched.epochs - 1))


def inner_loop(theta: np.ndarray, objective: Objective, sched: MetaSchedule) -> np.ndarray:
    """Adapt a copy of theta with inner_steps steps on one batch.

    A fresh optimizer state is used every call: each batch is an
    independent adaptation problem. The input vector is never mutated.
    """
    th = np.array(theta, copy=True)
    if sched.inner_steps == 0:
        return th
    state = AdamState.init(th.size, dtype=th.dtype) if sched.inner_opt == "adam" else None
    for _ in range(sched.inner_steps):
        _, grad = objective(th)
        if state is not None:
            th = adam_step(th, grad, state, sched.inner_lr)
        else:
            th = th - sched.inner_lr * grad
    return th


def reptile_outer_step(
    theta: np.ndarray,
    theta_tilde: np.ndarray,
    meta_state: Optional[AdamState],
    lr: float,
) -> np.ndarray:
    """Outer update treating (theta - theta_tilde) as the gradient.

    With meta_state None this is the plain rule theta - lr*(theta -
    theta_tilde); otherwise the pseudo-gradient goes through Adam.
    """
    if theta.shape != theta_tilde.shape:
        raise ValueError("reptile_outer_step shape mismatch")
    pseudo_grad = theta - theta_tilde
    if meta_state is None:
        return theta - lr * pseudo_grad
    return adam_step(theta, pseudo_grad, meta_state, lr)

#!/usr/bin/env python3
# First-order meta-learning in isolation: learn an initialization over a
# family of sinusoid regression tasks, then adapt to a new task in a few
# steps. The comparison arm trains one model on all task data pooled.

import numpy as np

from czsl.layers import AffineParams, affine_backward, affine_forward, relu_backward, relu_forward
from czsl.numerics import make_rng
from czsl.optim import AdamState, MetaSchedule, adam_step, inner_loop, meta_lr, reptile_outer_step

HIDDEN = 32
SHAPES = [(1, HIDDEN), (HIDDEN,), (HIDDEN, HIDDEN), (HIDDEN,), (HIDDEN, 1), (1,)]


def init_theta(rng):
    parts = []
    for fi, fo in [(1, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 1)]:
        a = AffineParams.init(rng, fi, fo, dtype=np.float64)
        parts += [a.weight.ravel(), a.bias]
    return np.concatenate(parts)


def mse_objective(x, y):
    def obj(theta):
        pieces, pos = [], 0
        for s in SHAPES:
            size = int(np.prod(s))
            pieces.append(theta[pos:pos + size].reshape(s))
            pos += size
        p1, p2, p3 = (AffineParams(pieces[0], pieces[1]),
                      AffineParams(pieces[2], pieces[3]),
                      AffineParams(pieces[4], pieces[5]))
        h1, c1 = affine_forward(p1, x)
        r1, cr1 = relu_forward(h1)
        h2, c2 = affine_forward(p2, r1)
        r2, cr2 = relu_forward(h2)
        pred, c3 = affine_forward(p3, r2)
        loss = float(((pred - y) ** 2).mean())
        dpred = 2.0 * (pred - y) / pred.size
        dh2 = relu_backward(cr2, affine_backward(p3, c3, dpred))
        dh1 = relu_backward(cr1, affine_backward(p2, c2, dh2))
        affine_backward(p1, c1, dh1)
        return loss, np.concatenate([p1.grad_weight.ravel(), p1.grad_bias,
                                     p2.grad_weight.ravel(), p2.grad_bias,
                                     p3.grad_weight.ravel(), p3.grad_bias])
    return obj


def sample_task(rng):
    amp = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, np.pi)
    x = rng.uniform(-5, 5, size=(20, 1))
    return x, amp * np.sin(x + phase)


sched = MetaSchedule(meta_lr0=1.0, inner_lr=0.01, inner_steps=30, epochs=30,
                     inner_opt="adam", outer_opt="plain")
theta0 = init_theta(make_rng(0))

# Meta-training: each outer step adapts to a batch of tasks and moves the
# initialization toward the average adapted parameters.
theta = theta0.copy()
task_rng = make_rng(1)
all_tasks = []
for step in range(30):
    batch = [sample_task(task_rng) for _ in range(10)]
    all_tasks += batch
    adapted = [inner_loop(theta, mse_objective(x, y), sched) for x, y in batch]
    theta = reptile_outer_step(theta, np.mean(adapted, axis=0), None, meta_lr(step, sched))
    if step % 10 == 0:
        print(f"meta step {step:2d}: outer lr {meta_lr(step, sched):.3f}")

# Baseline: same gradient budget on the pooled data.
joint = theta0.copy()
state = AdamState.init(joint.size)
pooled = mse_objective(np.vstack([x for x, _ in all_tasks]), np.vstack([y for _, y in all_tasks]))
for _ in range(30 * 30):
    _, g = pooled(joint)
    joint = adam_step(joint, g, state, 0.01)

# Adapt both to fresh tasks with a short budget and compare.
eval_sched = MetaSchedule(inner_lr=0.02, inner_steps=10, epochs=1, inner_opt="adam")
for name, start in (("meta-learned init", theta), ("joint-trained init", joint)):
    eval_rng = make_rng(2)
    losses = []
    for _ in range(10):
        x, y = sample_task(eval_rng)
        adapted = inner_loop(start, mse_objective(x, y), eval_sched)
        losses.append(mse_objective(x, y)(adapted)[0])
    print(f"{name}: post-adaptation MSE {np.mean(losses):.4f}")

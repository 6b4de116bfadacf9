import hashlib

import numpy as np
import pytest

from czsl.layers import (
    AffineParams,
    affine_backward,
    affine_forward,
    relu_backward,
    relu_forward,
)
from czsl.numerics import make_rng
from czsl.optim import (
    AdamState,
    MetaSchedule,
    adam_step,
    inner_loop,
    meta_lr,
    reptile_outer_step,
)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        theta = np.array([1.0, -2.0, 3.0])
        state = AdamState.init(3)
        assert np.array_equal(adam_step(theta, np.zeros(3), state, 0.1), theta)

    def test_first_step_moves_by_lr(self):
        rng = make_rng(0)
        g = rng.uniform(0.001, 1.0, size=32) * rng.choice([-1.0, 1.0], size=32)
        theta = np.zeros(32)
        state = AdamState.init(32)
        step = adam_step(theta, g, state, lr=0.05) - theta
        assert np.all(np.sign(step) == -np.sign(g))
        assert np.all(np.abs(step) <= 0.05 + 1e-12)
        assert np.all(np.abs(step) >= 0.05 * 0.99)

    def test_trajectory_matches_reference(self):
        # 200 steps on f(theta) = ||theta||^2, grad = 2 theta
        theta = np.array([3.0, -1.5, 0.25, 7.0])
        state = AdamState.init(4)
        ours = theta.copy()
        for _ in range(200):
            ours = adam_step(ours, 2.0 * ours, state, lr=0.01)
        # independent textbook loop following its own trajectory
        ref = theta.copy()
        m = np.zeros(4)
        v = np.zeros(4)
        for t in range(1, 201):
            g = 2.0 * ref
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9**t)
            vh = v / (1 - 0.999**t)
            ref = ref - 0.01 * mh / (np.sqrt(vh) + 1e-8)
        assert np.max(np.abs(ours - ref)) < 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(3), np.zeros(4), AdamState.init(3), 0.1)


def quadratic_objective(target):
    def obj(theta):
        d = theta - target
        return float((d @ d)), 2.0 * d

    return obj


class TestInnerLoop:
    def test_zero_steps_is_identity(self):
        theta = np.array([1.0, 2.0])
        sched = MetaSchedule(inner_steps=0, epochs=1)
        assert np.array_equal(inner_loop(theta, quadratic_objective(np.zeros(2)), sched), theta)

    def test_never_mutates_input(self):
        theta = make_rng(1).standard_normal(16)
        digest = hashlib.sha256(theta.tobytes()).hexdigest()
        sched = MetaSchedule(inner_steps=7, inner_lr=0.05, epochs=1)
        inner_loop(theta, quadratic_objective(np.ones(16)), sched)
        assert hashlib.sha256(theta.tobytes()).hexdigest() == digest

    def test_single_sgd_step_definition(self):
        theta = np.array([0.5, -0.25, 4.0])
        target = np.array([1.0, 1.0, 1.0])
        sched = MetaSchedule(inner_steps=1, inner_lr=0.1, inner_opt="sgd", epochs=1)
        tilde = inner_loop(theta, quadratic_objective(target), sched)
        _, g = quadratic_objective(target)(theta)
        assert np.array_equal(tilde, theta - 0.1 * g)

    def test_descends_on_quadratic(self):
        theta = make_rng(2).standard_normal(8) * 3
        obj = quadratic_objective(np.zeros(8))
        sched = MetaSchedule(inner_steps=5, inner_lr=0.05, epochs=1)
        tilde = inner_loop(theta, obj, sched)
        assert obj(tilde)[0] <= obj(theta)[0]


class TestReptile:
    def test_identical_params_are_fixed_point(self):
        theta = make_rng(3).standard_normal(10)
        assert np.array_equal(reptile_outer_step(theta, theta.copy(), None, 0.5), theta)
        state = AdamState.init(10)
        assert np.array_equal(reptile_outer_step(theta, theta.copy(), state, 0.5), theta)

    def test_composition_equals_single_sgd_step(self):
        # z=1 SGD inner + plain outer: one step at lr eta*gamma (exact)
        rng = make_rng(4)
        theta = rng.standard_normal(12)
        target = rng.standard_normal(12)
        eta, gamma = 0.37, 0.015
        sched = MetaSchedule(inner_steps=1, inner_lr=gamma, inner_opt="sgd", epochs=1)
        tilde = inner_loop(theta, quadratic_objective(target), sched)
        out = reptile_outer_step(theta, tilde, None, eta)
        _, g = quadratic_objective(target)(theta)
        assert np.max(np.abs(out - (theta - eta * gamma * g))) < 1e-12

    def test_plain_mode_is_linear_in_pseudo_gradient(self):
        rng = make_rng(5)
        theta = rng.standard_normal(6)
        d1 = rng.standard_normal(6)
        d2 = rng.standard_normal(6)
        lr = 0.3
        out12 = reptile_outer_step(theta, theta - (d1 + d2), None, lr)
        out1 = reptile_outer_step(theta, theta - d1, None, lr)
        out2 = reptile_outer_step(theta, theta - d2, None, lr)
        assert np.max(np.abs((out12 - theta) - ((out1 - theta) + (out2 - theta)))) < 1e-12


class TestMetaLr:
    def test_endpoints_and_midpoint(self):
        sched = MetaSchedule(epochs=200)
        assert meta_lr(0, sched) == 0.001
        assert meta_lr(199, sched) == 0.0
        assert np.isclose(meta_lr(199 // 2, sched), 0.0005, atol=2.6e-6)

    def test_exact_midpoint_with_odd_epochs(self):
        sched = MetaSchedule(epochs=201)
        assert meta_lr(100, sched) == 0.0005

    def test_out_of_range(self):
        sched = MetaSchedule(epochs=10)
        with pytest.raises(ValueError):
            meta_lr(10, sched)
        with pytest.raises(ValueError):
            meta_lr(-1, sched)

    def test_single_epoch(self):
        assert meta_lr(0, MetaSchedule(epochs=1)) == 0.001


# --- sinusoid-family meta-learning sanity experiment --------------------------

_H = 32
_SHAPES = [(1, _H), (_H,), (_H, _H), (_H,), (_H, 1), (1,)]


def _init_theta(rng):
    parts = []
    for fi, fo in [(1, _H), (_H, _H), (_H, 1)]:
        a = AffineParams.init(rng, fi, fo, dtype=np.float64)
        parts += [a.weight.ravel(), a.bias]
    return np.concatenate(parts)


def _mse_objective(x, y):
    def obj(theta):
        pieces, pos = [], 0
        for s in _SHAPES:
            size = int(np.prod(s))
            pieces.append(theta[pos : pos + size].reshape(s))
            pos += size
        p1 = AffineParams(pieces[0], pieces[1])
        p2 = AffineParams(pieces[2], pieces[3])
        p3 = AffineParams(pieces[4], pieces[5])
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
        return loss, np.concatenate(
            [
                p1.grad_weight.ravel(),
                p1.grad_bias,
                p2.grad_weight.ravel(),
                p2.grad_bias,
                p3.grad_weight.ravel(),
                p3.grad_bias,
            ]
        )

    return obj


def _sample_task(rng):
    amp = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, np.pi)
    x = rng.uniform(-5, 5, size=(20, 1))
    return x, amp * np.sin(x + phase)


def test_meta_training_beats_joint_baseline_on_sinusoids():
    """50 Reptile meta-steps halve post-adaptation loss vs joint training.

    Oracle arm: the same gradient budget spent minimizing the pooled loss
    of the same tasks. Both arms then adapt briefly to fresh tasks.
    """
    meta_batch, inner_steps = 10, 30
    sched = MetaSchedule(
        meta_lr0=1.0, inner_lr=0.01, inner_steps=inner_steps, epochs=50,
        inner_opt="adam", outer_opt="plain",
    )
    theta0 = _init_theta(make_rng(0))
    theta = theta0.copy()
    task_rng = make_rng(1)
    tasks = []
    for step in range(50):
        batch = [_sample_task(task_rng) for _ in range(meta_batch)]
        tasks += batch
        adapted = [inner_loop(theta, _mse_objective(x, y), sched) for x, y in batch]
        theta = reptile_outer_step(theta, np.mean(adapted, axis=0), None, meta_lr(step, sched))

    xj = np.vstack([x for x, _ in tasks])
    yj = np.vstack([y for _, y in tasks])
    joint = theta0.copy()
    state = AdamState.init(joint.size)
    joint_obj = _mse_objective(xj, yj)
    for _ in range(50 * inner_steps):
        _, g = joint_obj(joint)
        joint = adam_step(joint, g, state, sched.inner_lr)

    eval_sched = MetaSchedule(inner_lr=0.02, inner_steps=10, epochs=1, inner_opt="adam")

    def post_adaptation_loss(start):
        eval_rng = make_rng(2)
        losses = []
        for _ in range(20):
            x, y = _sample_task(eval_rng)
            adapted = inner_loop(start, _mse_objective(x, y), eval_sched)
            losses.append(_mse_objective(x, y)(adapted)[0])
        return float(np.mean(losses))

    meta_loss = post_adaptation_loss(theta)
    joint_loss = post_adaptation_loss(joint)
    assert meta_loss > 0
    assert joint_loss / meta_loss >= 2.0, f"ratio {joint_loss / meta_loss:.2f}"

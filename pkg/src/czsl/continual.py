"""Streaming replay memory and the sequential-task training loop.

The reservoir keeps a constant-size uniform sample of everything streamed
through it (each offered item is retained with probability M/N); a
per-class ring buffer is available as an alternative eviction policy.
Training draws N-way/K-shot episodes mixing fresh task data with replayed
samples, adapts on each episode, and applies the meta update.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np

from . import model as model_mod
from .numerics import check_finite
from .optim import AdamState, MetaSchedule, adam_step, inner_loop, meta_lr, reptile_outer_step

POLICIES = ("reservoir", "ring")

RESERVOIR_MAGIC = b"CZRV"
RESERVOIR_VERSION = 1


@dataclass
class Reservoir:
    """Fixed-budget replay memory over (feature, label, task_id) items."""

    capacity: int
    policy: str = "reservoir"
    seen_count: int = 0
    feat_dim: Optional[int] = None
    slots: list = field(default_factory=list)
    _ring: dict = field(default_factory=dict, repr=False)
    _index: Optional[dict] = field(default=None, repr=False)  # class -> items, lazy

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")

    def __len__(self) -> int:
        if self.policy == "ring":
            return sum(len(d) for d in self._ring.values())
        return len(self.slots)

    def items(self):
        """Stored items in a deterministic order."""
        if self.policy == "ring":
            out = []
            for c in sorted(self._ring):
                out.extend(self._ring[c])
            return out
        return list(self.slots)

    def classes(self) -> np.ndarray:
        if self.policy == "ring":
            return np.array(sorted(self._ring), dtype=np.int64)
        return np.unique(np.array([lab for _, lab, _ in self.slots], dtype=np.int64))

    def features_of_class(self, c: int):
        """(features, task_ids) of the stored items with label c, slot order."""
        if self._index is None:
            idx = {}
            for f, lab, t in self.items():
                idx.setdefault(lab, []).append((f, t))
            self._index = idx
        rows = self._index.get(int(c), [])
        if not rows:
            return np.zeros((0, self.feat_dim or 0), dtype=np.float32), []
        return np.stack([f for f, _ in rows]), [t for _, t in rows]

    def _check_feature(self, feature: np.ndarray) -> np.ndarray:
        self._index = None  # any offer path invalidates the class index
        feature = np.asarray(feature)
        if feature.ndim != 1:
            raise ValueError("reservoir items are 1-D feature vectors")
        if self.feat_dim is None:
            self.feat_dim = feature.shape[0]
        elif feature.shape[0] != self.feat_dim:
            raise ValueError(f"feature dim {feature.shape[0]} != reservoir dim {self.feat_dim}")
        return feature


def reservoir_offer(r: Reservoir, feature, label, task_id, rng: np.random.Generator) -> Reservoir:
    """Offer one item under uniform reservoir sampling (Vitter's algorithm R).

    After N offers each item occupies a slot with probability M/N.
    """
    feature = r._check_feature(feature)
    r.seen_count += 1
    if r.capacity == 0:
        return r
    item = (feature, int(label), int(task_id))
    if len(r.slots) < r.capacity:
        r.slots.append(item)
    else:
        j = int(rng.integers(0, r.seen_count))
        if j < r.capacity:
            r.slots[j] = item
    return r


def reservoir_offer_many(
    r: Reservoir, features: np.ndarray, labels, task_id, rng: np.random.Generator
) -> Reservoir:
    """Bulk reservoir_offer with one vectorized draw per stream.

    Same retention law as the scalar form (each replacement index is
    uniform on [0, N) at its own N); the two forms consume the rng
    differently and are not stream-for-stream identical.
    """
    features = np.asarray(features)
    labels = np.asarray(labels)
    n = features.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must match feature rows")
    if n == 0:
        return r
    r._check_feature(features[0])
    if r.capacity == 0:
        r.seen_count += n
        return r
    i = 0
    while i < n and len(r.slots) < r.capacity:
        r.seen_count += 1
        r.slots.append((np.array(features[i]), int(labels[i]), int(task_id)))
        i += 1
    if i == n:
        return r
    counts = np.arange(r.seen_count + 1, r.seen_count + (n - i) + 1)
    draws = rng.integers(np.zeros_like(counts), counts)
    for k, j in enumerate(draws):
        if j < r.capacity:
            idx = i + k
            r.slots[int(j)] = (np.array(features[idx]), int(labels[idx]), int(task_id))
    r.seen_count += n - i
    return r


def ring_offer(r: Reservoir, feature, label, task_id) -> Reservoir:
    """Offer one item under the per-class FIFO policy.

    Every class seen so far gets an equal share M // n_classes of the
    budget (at least 1); the oldest items of any over-quota class are
    evicted first. If equal shares cannot fit (more classes than budget),
    the largest classes shed their oldest items until the total fits.
    """
    feature = r._check_feature(feature)
    r.seen_count += 1
    if r.capacity == 0:
        return r
    label = int(label)
    if label not in r._ring:
        r._ring[label] = deque()
    r._ring[label].append((feature, label, int(task_id)))
    quota = max(1, r.capacity // len(r._ring))
    for d in r._ring.values():
        while len(d) > quota:
            d.popleft()
    while len(r) > r.capacity:
        sizes = {c: len(d) for c, d in r._ring.items() if len(d) > 0}
        largest = max(sizes, key=lambda c: (sizes[c], -c))
        r._ring[largest].popleft()
    return r


def offer(r: Reservoir, feature, label, task_id, rng) -> Reservoir:
    if r.policy == "ring":
        return ring_offer(r, feature, label, task_id)
    return reservoir_offer(r, feature, label, task_id, rng)


def save_reservoir(r: Reservoir, path) -> None:
    """CZRV v1: magic, u32 version, u32 capacity, u32 policy, u64 seen,
    u32 n_items, u32 feat_dim; then features f32[n*d], labels u32[n],
    task_ids u32[n]. Little-endian throughout."""
    items = r.items()
    d = r.feat_dim or 0
    head = struct.pack(
        "<4sIIIQII",
        RESERVOIR_MAGIC,
        RESERVOIR_VERSION,
        r.capacity,
        POLICIES.index(r.policy),
        r.seen_count,
        len(items),
        d,
    )
    feats = (
        np.stack([f for f, _, _ in items]).astype("<f4")
        if items
        else np.zeros((0, d), dtype="<f4")
    )
    labels = np.array([lab for _, lab, _ in items], dtype="<u4")
    tasks = np.array([t for _, _, t in items], dtype="<u4")
    with open(path, "wb") as f:
        f.write(head)
        f.write(feats.tobytes())
        f.write(labels.tobytes())
        f.write(tasks.tobytes())


def load_reservoir(path) -> Reservoir:
    with open(path, "rb") as f:
        blob = f.read()
    head_size = struct.calcsize("<4sIIIQII")
    if len(blob) < head_size:
        raise ValueError("truncated reservoir file")
    magic, version, capacity, policy_code, seen, n_items, d = struct.unpack_from(
        "<4sIIIQII", blob, 0
    )
    if magic != RESERVOIR_MAGIC:
        raise ValueError("bad reservoir magic")
    if version != RESERVOIR_VERSION:
        raise ValueError(f"unsupported reservoir version {version}")
    expected = head_size + n_items * (4 * d + 8)
    if len(blob) != expected:
        raise ValueError("reservoir payload size mismatch")
    pos = head_size
    feats = np.frombuffer(blob, dtype="<f4", count=n_items * d, offset=pos).reshape(n_items, d)
    pos += 4 * n_items * d
    labels = np.frombuffer(blob, dtype="<u4", count=n_items, offset=pos)
    pos += 4 * n_items
    tasks = np.frombuffer(blob, dtype="<u4", count=n_items, offset=pos)
    r = Reservoir(capacity=int(capacity), policy=POLICIES[policy_code])
    r.seen_count = int(seen)
    r.feat_dim = int(d) if n_items or d else None
    for i in range(n_items):
        item = (feats[i].astype(np.float32), int(labels[i]), int(tasks[i]))
        if r.policy == "ring":
            r._ring.setdefault(item[1], deque()).append(item)
        else:
            r.slots.append(item)
    return r


@dataclass
class Episode:
    """One N-way/K-shot batch with labels re-indexed into its own class set."""

    features: np.ndarray
    labels: np.ndarray  # indices into class_ids
    class_ids: np.ndarray  # ascending
    n_way: int
    k_shot: int


def sample_episode(
    task_features: np.ndarray,
    task_labels: np.ndarray,
    reservoir: Reservoir,
    n_way: int,
    k_shot: int,
    rng: np.random.Generator,
) -> Episode:
    """Draw an episode from the current task pooled with the replay memory.

    Classes come uniformly without replacement from the union of the two
    sources; per class, up to k_shot samples are drawn without
    replacement from the pooled rows (all of them if the class is
    scarcer). Deterministic given the rng state.
    """
    if n_way < 1 or k_shot < 1:
        raise ValueError("n_way and k_shot must be >= 1")
    task_classes = np.unique(task_labels) if len(task_labels) else np.array([], dtype=np.int64)
    pool = np.union1d(task_classes, reservoir.classes()).astype(np.int64)
    if pool.size == 0:
        raise ValueError("no classes available to sample an episode")
    n_eff = min(n_way, pool.size)
    class_ids = np.sort(rng.choice(pool, size=n_eff, replace=False))
    feats, labels = [], []
    for local, c in enumerate(class_ids):
        rows = [task_features[i] for i in np.flatnonzero(task_labels == c)]
        res_rows, _ = reservoir.features_of_class(int(c))
        rows.extend(res_rows)
        k_eff = min(k_shot, len(rows))
        picks = rng.choice(len(rows), size=k_eff, replace=False)
        for i in np.sort(picks):
            feats.append(rows[int(i)])
            labels.append(local)
    return Episode(
        features=np.stack(feats),
        labels=np.array(labels, dtype=np.int64),
        class_ids=class_ids,
        n_way=n_eff,
        k_shot=k_shot,
    )


@dataclass
class TrainConfig:
    """Episode composition and training-mode switches."""

    n_way: int = 32
    k_shot: int = 4
    disable_meta: bool = False
    replay: bool = True


def run_task(
    theta: np.ndarray,
    template: model_mod.ModelParams,
    task_features: np.ndarray,
    task_labels: np.ndarray,
    attributes: np.ndarray,
    reservoir: Reservoir,
    sched: MetaSchedule,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    task_id: int,
) -> np.ndarray:
    """Train on one task for sched.epochs, then stream its samples into
    the reservoir.

    Per epoch: ceil(task_size / (n_way*k_shot)) episodes, each adapted in
    the inner loop and folded back by the Reptile outer step at the
    epoch's meta learning rate. With disable_meta the same episodes feed
    a single persistent Adam run at the inner learning rate instead.
    """
    if len(task_labels) == 0:
        raise ValueError("task data must be nonempty")
    check_finite(task_features, "task features")
    meta_state = AdamState.init(theta.size, dtype=theta.dtype)
    plain_state = AdamState.init(theta.size, dtype=theta.dtype)
    for epoch in range(sched.epochs):
        lr = meta_lr(epoch, sched)
        n_classes = int(np.union1d(np.unique(task_labels), reservoir.classes()).size)
        n_way_eff = min(tcfg.n_way, n_classes)
        n_batches = max(1, ceil(len(task_labels) / (n_way_eff * tcfg.k_shot)))
        for _ in range(n_batches):
            ep = sample_episode(task_features, task_labels, reservoir, tcfg.n_way, tcfg.k_shot, rng)
            objective = model_mod.episode_objective(
                template, ep.features, ep.labels, attributes[ep.class_ids]
            )
            if tcfg.disable_meta:
                _, grad = objective(theta)
                theta = adam_step(theta, grad, plain_state, sched.inner_lr)
            else:
                theta_tilde = inner_loop(theta, objective, sched)
                theta = reptile_outer_step(theta, theta_tilde, meta_state, lr)
    if tcfg.replay and reservoir.capacity > 0:
        for i in range(len(task_labels)):
            offer(reservoir, task_features[i], int(task_labels[i]), task_id, rng)
    return theta


@dataclass
class StreamResult:
    """Per-task parameter snapshots and the final replay memory."""

    template: model_mod.ModelParams
    snapshots: list  # flat theta after each task
    reservoir: Reservoir

    def params_after_task(self, i: int) -> model_mod.ModelParams:
        """Parameters after training task i (1-based)."""
        return model_mod.unflatten(self.template, self.snapshots[i - 1])

    def predictors(self):
        return [
            model_mod.make_predictor(model_mod.unflatten(self.template, s)) for s in self.snapshots
        ]


def run_stream(
    container,
    plan,
    params: model_mod.ModelParams,
    sched: MetaSchedule,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    reservoir: Optional[Reservoir] = None,
) -> StreamResult:
    """Run the protocol's task sequence, snapshotting after every task."""
    if reservoir is None:
        budget = plan.reservoir_budget if tcfg.replay else 0
        reservoir = Reservoir(capacity=budget, policy="reservoir")
    theta = model_mod.flatten(params)
    snapshots = []
    for task in plan.tasks:
        theta = run_task(
            theta,
            params,
            container.features[task.train_idx],
            container.labels[task.train_idx],
            container.attributes,
            reservoir,
            sched,
            tcfg,
            rng,
            task.task_id,
        )
        snapshots.append(theta.copy())
    return StreamResult(template=params, snapshots=snapshots, reservoir=reservoir)

"""Evaluation protocols: class/task splits, per-class accuracy, and the
aggregated seen/unseen/harmonic metrics.

Three settings are supported:

* gzsl            — one training stage on the seen classes, test samples
                    from seen and unseen classes, joint candidate set.
* fixed_continual — all classes are fixed upfront and split into K
                    subsets; subset t becomes seen at task t, the rest
                    stay unseen. Metrics average tasks 1..K-1 (task K has
                    no unseen classes left).
* dynamic_continual — every task brings its own disjoint seen and unseen
                    classes; both populations grow, metrics average all K
                    tasks with cumulative unseen sets.

Per-task rows follow the evaluation equations' candidate sets: the seen
(resp. unseen) accuracy is computed among the seen (resp. unseen)
candidates only, while the per-task harmonic mean is taken between
accuracies computed against the joint candidate set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import DatasetContainer, DatasetMeta, find_registry_meta

METRICS_SCHEMA_VERSION = 1

PROTOCOLS = ("gzsl", "fixed_continual", "dynamic_continual")

# Reservoir budget = multiplier x class count; fixed uses the dataset's
# total class count, dynamic its seen-class count.
_FIXED_TASKS = {"awa1": 5, "awa2": 5, "cub": 20, "apy": 4, "sun": 15}
_FIXED_BUDGET_MULT = {"awa1": 25, "awa2": 25, "cub": 10, "apy": 25, "sun": 5}
_DYNAMIC_TASKS = dict(_FIXED_TASKS)
_DYNAMIC_BUDGET_MULT = dict(_FIXED_BUDGET_MULT)
_DEFAULT_BUDGET_MULT = 25  # for datasets outside the registry


@dataclass
class TaskSplit:
    """One task's classes and sample index sets."""

    task_id: int  # 1-based
    seen: np.ndarray  # classes becoming seen at this task
    unseen: np.ndarray  # fixed: all not-yet-seen classes; dynamic: this task's new unseen
    train_idx: np.ndarray
    test_seen_idx: np.ndarray  # test samples of all classes seen so far
    test_unseen_idx: np.ndarray  # test samples of the task's evaluation unseen set

    def __post_init__(self):
        if np.intersect1d(self.seen, self.unseen).size:
            raise ValueError("seen and unseen classes must be disjoint")


@dataclass
class ProtocolPlan:
    """Ordered task splits plus the protocol's replay budget."""

    protocol: str
    tasks: list
    reservoir_budget: int
    dataset: str = ""

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol}")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def cum_seen(self, i: int) -> np.ndarray:
        """Classes seen after task i (1-based)."""
        return np.sort(np.concatenate([t.seen for t in self.tasks[:i]]))

    def cum_unseen(self, i: int) -> np.ndarray:
        """Dynamic protocol: unseen classes accumulated through task i."""
        return np.sort(np.concatenate([t.unseen for t in self.tasks[:i]]))

    def validate(self):
        all_new_seen = np.concatenate([t.seen for t in self.tasks])
        if len(np.unique(all_new_seen)) != len(all_new_seen):
            raise ValueError("a class becomes seen in more than one task")
        for i, t in enumerate(self.tasks, start=1):
            if np.intersect1d(self.cum_seen(i), t.unseen).size:
                raise ValueError(f"task {i}: unseen classes overlap the seen set")
        if self.protocol == "dynamic_continual":
            all_unseen = np.concatenate([t.unseen for t in self.tasks])
            if len(np.unique(all_unseen)) != len(all_unseen):
                raise ValueError("dynamic unseen classes must be disjoint across tasks")
        return self


def chunk_sizes(total: int, parts: int) -> list:
    """Split a count into parts: floor(total/parts) each, +1 for the last
    total%parts parts (matches the benchmark task tables)."""
    if parts < 1 or total < parts:
        raise ValueError(f"cannot split {total} classes into {parts} tasks")
    base, extra = divmod(total, parts)
    return [base] * (parts - extra) + [base + 1] * extra


def _chunks(values: np.ndarray, sizes: Sequence[int]) -> list:
    out, pos = [], 0
    for s in sizes:
        out.append(values[pos : pos + s])
        pos += s
    return out


def _class_sample_pools(
    container: DatasetContainer,
    resplit: Optional[float],
    rng: Optional[np.random.Generator],
):
    """Per-class train/test index pools.

    With resplit None the container's own split arrays are used. A
    resplit fraction pools every sample of each class and re-splits it
    (that fraction becoming test), which the fixed protocol needs on
    containers whose unseen classes carry no train samples.
    """
    labels = container.labels
    train_by, test_by = {}, {}
    if resplit is None:
        test_all = np.concatenate([container.test_seen_idx, container.test_unseen_idx])
        for c in range(container.n_classes):
            train_by[c] = container.train_idx[labels[container.train_idx] == c]
            test_by[c] = np.sort(test_all[labels[test_all] == c])
    else:
        if not 0.0 < resplit < 1.0:
            raise ValueError("resplit fraction must be in (0, 1)")
        if rng is None:
            raise ValueError("resplit requires an rng")
        for c in range(container.n_classes):
            pool = np.flatnonzero(labels == c)
            perm = rng.permutation(pool)
            k_test = max(1, int(round(resplit * pool.size)))
            k_test = min(k_test, pool.size - 1) if pool.size > 1 else pool.size
            test_by[c] = np.sort(perm[:k_test])
            train_by[c] = np.sort(perm[k_test:])
    return train_by, test_by


def _gather(index_by_class: dict, classes: np.ndarray) -> np.ndarray:
    parts = [index_by_class[int(c)] for c in classes]
    if not parts:
        return np.array([], dtype=np.int64)
    return np.concatenate(parts).astype(np.int64)


def build_fixed_splits(
    container: DatasetContainer,
    meta: Optional[DatasetMeta] = None,
    n_tasks: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = False,
    resplit: Optional[float] = None,
    budget: Optional[int] = None,
) -> ProtocolPlan:
    """All classes split into K subsets; the first t subsets are seen at
    task t. Registry datasets pin K and the replay budget."""
    if meta is None:
        meta = find_registry_meta(container.n_classes, container.attr_dim)
    if meta is not None:
        name = meta.name
        k = _FIXED_TASKS[name]
        default_budget = _FIXED_BUDGET_MULT[name] * meta.n_classes
    else:
        name = "custom"
        if n_tasks is None:
            raise ValueError("n_tasks is required for datasets outside the registry")
        k = n_tasks
        default_budget = _DEFAULT_BUDGET_MULT * container.n_classes
    if n_tasks is not None and meta is not None and n_tasks != k:
        k = n_tasks  # explicit override wins
    classes = np.arange(container.n_classes, dtype=np.int64)
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an rng")
        classes = rng.permutation(classes)
    subsets = _chunks(classes, chunk_sizes(len(classes), k))
    train_by, test_by = _class_sample_pools(container, resplit, rng)
    tasks = []
    for t in range(1, k + 1):
        new_seen = np.sort(subsets[t - 1])
        unseen = np.sort(np.concatenate(subsets[t:])) if t < k else np.array([], dtype=np.int64)
        cum_seen = np.sort(np.concatenate(subsets[:t]))
        tasks.append(
            TaskSplit(
                task_id=t,
                seen=new_seen,
                unseen=unseen,
                train_idx=_gather(train_by, new_seen),
                test_seen_idx=_gather(test_by, cum_seen),
                test_unseen_idx=_gather(test_by, unseen),
            )
        )
    plan = ProtocolPlan(
        protocol="fixed_continual",
        tasks=tasks,
        reservoir_budget=budget if budget is not None else default_budget,
        dataset=name,
    )
    return plan.validate()


def build_dynamic_splits(
    container: DatasetContainer,
    meta: Optional[DatasetMeta] = None,
    n_tasks: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = False,
    budget: Optional[int] = None,
) -> ProtocolPlan:
    """Each task brings fresh disjoint seen and unseen classes, carved in
    order from the container's seen and unseen pools."""
    if meta is None:
        meta = find_registry_meta(container.n_classes, container.attr_dim)
    seen_pool = container.seen_classes
    unseen_pool = container.unseen_classes
    if meta is not None:
        name = meta.name
        k = _DYNAMIC_TASKS[name]
        default_budget = _DYNAMIC_BUDGET_MULT[name] * meta.n_seen
    else:
        name = "custom"
        if n_tasks is None:
            raise ValueError("n_tasks is required for datasets outside the registry")
        k = n_tasks
        default_budget = _DEFAULT_BUDGET_MULT * len(seen_pool)
    if n_tasks is not None and meta is not None and n_tasks != k:
        k = n_tasks
    if shuffle:
        if rng is None:
            raise ValueError("shuffle requires an rng")
        seen_pool = rng.permutation(seen_pool)
        unseen_pool = rng.permutation(unseen_pool)
    seen_chunks = _chunks(seen_pool, chunk_sizes(len(seen_pool), k))
    unseen_chunks = _chunks(unseen_pool, chunk_sizes(len(unseen_pool), k))
    train_by, test_by = _class_sample_pools(container, None, None)
    tasks = []
    cum_unseen = np.array([], dtype=np.int64)
    cum_seen = np.array([], dtype=np.int64)
    for t in range(1, k + 1):
        new_seen = np.sort(seen_chunks[t - 1])
        new_unseen = np.sort(unseen_chunks[t - 1])
        cum_seen = np.sort(np.concatenate([cum_seen, new_seen]))
        cum_unseen = np.sort(np.concatenate([cum_unseen, new_unseen]))
        tasks.append(
            TaskSplit(
                task_id=t,
                seen=new_seen,
                unseen=new_unseen,
                train_idx=_gather(train_by, new_seen),
                test_seen_idx=_gather(test_by, cum_seen),
                test_unseen_idx=_gather(test_by, cum_unseen),
            )
        )
    plan = ProtocolPlan(
        protocol="dynamic_continual",
        tasks=tasks,
        reservoir_budget=budget if budget is not None else default_budget,
        dataset=name,
    )
    return plan.validate()


def build_gzsl_plan(container: DatasetContainer) -> ProtocolPlan:
    """Single-stage plan: train once on all seen classes."""
    seen = container.seen_classes
    unseen = container.unseen_classes
    train_mask = np.isin(container.labels[container.train_idx], seen)
    task = TaskSplit(
        task_id=1,
        seen=seen,
        unseen=unseen,
        train_idx=container.train_idx[train_mask],
        test_seen_idx=container.test_seen_idx,
        test_unseen_idx=container.test_unseen_idx,
    )
    return ProtocolPlan(protocol="gzsl", tasks=[task], reservoir_budget=0, dataset="")


# --- metrics ------------------------------------------------------------------


def per_class_accuracy(preds: np.ndarray, labels: np.ndarray, class_set: np.ndarray) -> float:
    """Mean over the classes in class_set (those with >=1 sample) of the
    per-class fraction correct, as a percentage. Samples labeled outside
    class_set are ignored."""
    class_set = np.asarray(class_set)
    if class_set.size == 0:
        raise ValueError("class_set must be nonempty")
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    accs = []
    for c in class_set:
        mask = labels == c
        total = int(mask.sum())
        if total == 0:
            continue
        accs.append(float((preds[mask] == c).sum()) / total)
    if not accs:
        return 0.0
    return 100.0 * float(np.mean(accs))


def harmonic_mean(s: float, u: float) -> float:
    """2su/(s+u), 0 when both terms vanish."""
    if s < 0 or u < 0:
        raise ValueError("harmonic_mean expects nonnegative inputs")
    if s + u == 0:
        return 0.0
    return 2.0 * s * u / (s + u)


@dataclass
class TaskMetrics:
    task: int
    seen_acc: float
    unseen_acc: float
    harmonic: float


@dataclass
class MetricsRecord:
    """Per-task rows and their means (all percentages)."""

    protocol: str
    per_task: list
    msa: float = 0.0
    mua: float = 0.0
    mh: float = 0.0
    dataset: str = ""
    seed: Optional[int] = None

    def validate(self):
        """Range checks; the H <= 2*min(S, U) bound is enforced where it is
        a theorem. Continual rows compute H from joint-candidate accuracies
        while seen/unseen use restricted candidates, and for an
        argmax-consistent classifier restricting candidates never lowers
        accuracy, so the bound still holds; an arbitrary (e.g. randomized)
        predictor can violate it, so only gzsl rows hard-check it here.
        """
        for row in self.per_task:
            for v in (row.seen_acc, row.unseen_acc, row.harmonic):
                if not 0.0 <= v <= 100.0:
                    raise ValueError("metric outside [0, 100]")
            if self.protocol == "gzsl" and row.harmonic > 2.0 * min(
                row.seen_acc, row.unseen_acc
            ) + 1e-9:
                raise ValueError("harmonic exceeds 2*min(seen, unseen)")
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": METRICS_SCHEMA_VERSION,
            "protocol": self.protocol,
            "dataset": self.dataset,
            "seed": self.seed,
            "per_task": [
                {
                    "task": r.task,
                    "seen_acc": r.seen_acc,
                    "unseen_acc": r.unseen_acc,
                    "harmonic": r.harmonic,
                }
                for r in self.per_task
            ],
            "aggregate": {"msa": self.msa, "mua": self.mua, "mh": self.mh},
        }

    def json_bytes(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n").encode()

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRecord":
        if d.get("schema_version") != METRICS_SCHEMA_VERSION:
            raise ValueError("unsupported metrics schema version")
        rows = [
            TaskMetrics(r["task"], r["seen_acc"], r["unseen_acc"], r["harmonic"])
            for r in d["per_task"]
        ]
        agg = d["aggregate"]
        return cls(
            protocol=d["protocol"],
            per_task=rows,
            msa=agg["msa"],
            mua=agg["mua"],
            mh=agg["mh"],
            dataset=d.get("dataset", ""),
            seed=d.get("seed"),
        )


def _subset_accuracy(predict_fn, container, sample_idx, cand_classes, target_classes) -> float:
    """Per-class accuracy of the samples at sample_idx, predicting among
    cand_classes, averaged over target_classes."""
    if sample_idx.size == 0:
        return 0.0
    x = container.features[sample_idx]
    y = container.labels[sample_idx]
    local = predict_fn(x, container.attributes[cand_classes])
    pred_classes = np.asarray(cand_classes)[local]
    return per_class_accuracy(pred_classes, y, target_classes)


def _aggregate(protocol: str, rows: list, dataset: str = "") -> MetricsRecord:
    rec = MetricsRecord(
        protocol=protocol,
        per_task=rows,
        msa=float(np.mean([r.seen_acc for r in rows])),
        mua=float(np.mean([r.unseen_acc for r in rows])),
        mh=float(np.mean([r.harmonic for r in rows])),
        dataset=dataset,
    )
    return rec.validate()


def evaluate_fixed(predictors: Sequence, plan: ProtocolPlan, container: DatasetContainer) -> MetricsRecord:
    """Metric rows for tasks 1..K-1; predictors[i-1] must be the model
    state after training task i."""
    if plan.protocol != "fixed_continual":
        raise ValueError("plan is not a fixed-continual plan")
    if plan.n_tasks < 2:
        raise ValueError("fixed protocol needs at least 2 tasks")
    if len(predictors) < plan.n_tasks - 1:
        raise ValueError("need one predictor per evaluated task")
    rows = []
    for i in range(1, plan.n_tasks):
        task = plan.tasks[i - 1]
        seen_set = plan.cum_seen(i)
        unseen_set = task.unseen
        joint = np.sort(np.concatenate([seen_set, unseen_set]))
        fn = predictors[i - 1]
        sa = _subset_accuracy(fn, container, task.test_seen_idx, seen_set, seen_set)
        ua = _subset_accuracy(fn, container, task.test_unseen_idx, unseen_set, unseen_set)
        s_joint = _subset_accuracy(fn, container, task.test_seen_idx, joint, seen_set)
        u_joint = _subset_accuracy(fn, container, task.test_unseen_idx, joint, unseen_set)
        rows.append(TaskMetrics(i, sa, ua, harmonic_mean(s_joint, u_joint)))
    return _aggregate("fixed_continual", rows, plan.dataset)


def evaluate_dynamic(predictors: Sequence, plan: ProtocolPlan, container: DatasetContainer) -> MetricsRecord:
    """Metric rows for all K tasks with cumulative unseen sets."""
    if plan.protocol != "dynamic_continual":
        raise ValueError("plan is not a dynamic-continual plan")
    if len(predictors) < plan.n_tasks:
        raise ValueError("need one predictor per task")
    rows = []
    for i in range(1, plan.n_tasks + 1):
        task = plan.tasks[i - 1]
        seen_set = plan.cum_seen(i)
        unseen_set = plan.cum_unseen(i)
        joint = np.sort(np.concatenate([seen_set, unseen_set]))
        fn = predictors[i - 1]
        sa = _subset_accuracy(fn, container, task.test_seen_idx, seen_set, seen_set)
        ua = _subset_accuracy(fn, container, task.test_unseen_idx, unseen_set, unseen_set)
        s_joint = _subset_accuracy(fn, container, task.test_seen_idx, joint, seen_set)
        u_joint = _subset_accuracy(fn, container, task.test_unseen_idx, joint, unseen_set)
        rows.append(TaskMetrics(i, sa, ua, harmonic_mean(s_joint, u_joint)))
    return _aggregate("dynamic_continual", rows, plan.dataset)


def evaluate_gzsl(predict_fn, container: DatasetContainer) -> MetricsRecord:
    """Seen and unseen per-class accuracy against the joint candidate set."""
    seen = container.seen_classes
    unseen = container.unseen_classes
    if unseen.size == 0:
        raise ValueError("container has no unseen test classes")
    joint = np.sort(np.concatenate([seen, unseen]))
    sa = _subset_accuracy(predict_fn, container, container.test_seen_idx, joint, seen)
    ua = _subset_accuracy(predict_fn, container, container.test_unseen_idx, joint, unseen)
    rows = [TaskMetrics(1, sa, ua, harmonic_mean(sa, ua))]
    return _aggregate("gzsl", rows)


def evaluate_plan(predictors: Sequence, plan: ProtocolPlan, container: DatasetContainer) -> MetricsRecord:
    if plan.protocol == "gzsl":
        rec = evaluate_gzsl(predictors[-1], container)
    elif plan.protocol == "fixed_continual":
        rec = evaluate_fixed(predictors, plan, container)
    else:
        rec = evaluate_dynamic(predictors, plan, container)
    rec.dataset = plan.dataset or rec.dataset
    return rec

#!/usr/bin/env python3
# The replay memory: uniform reservoir sampling vs the per-class ring
# buffer, and the episode sampler that mixes replay with fresh data.

import numpy as np

from czsl import Reservoir, make_rng, sample_episode
from czsl.continual import reservoir_offer, reservoir_offer_many, ring_offer

rng = make_rng(0)

# Stream 2,000 items through a 50-slot reservoir. Each item should survive
# with probability 50/2000 = 2.5%, no matter when it arrived.
r = Reservoir(capacity=50)
for i in range(2000):
    reservoir_offer(r, np.float32([i]), label=i % 10, task_id=i // 500, rng=rng)
print(f"reservoir holds {len(r)} of {r.seen_count} seen")

arrivals = np.array([f[0] for f, _, _ in r.items()])
print("arrival times of survivors span the whole stream:",
      int(arrivals.min()), "...", int(arrivals.max()))

# Monte Carlo over many streams: early items survive as often as late ones.
counts = np.zeros(200)
mc = make_rng(1)
for _ in range(2000):
    r2 = Reservoir(capacity=20)
    reservoir_offer_many(r2, np.zeros((200, 1), np.float32), np.arange(200), 0, mc)
    for _, lab, _ in r2.items():
        counts[lab] += 1
print("inclusion rate first/last 50 items: "
      f"{counts[:50].mean() / 2000:.3f} vs {counts[-50:].mean() / 2000:.3f} (target 0.100)")

# The ring buffer instead guarantees per-class balance: each class seen so
# far gets an equal share and evicts its own oldest items first.
ring = Reservoir(capacity=12, policy="ring")
for i in range(40):
    ring_offer(ring, np.float32([i]), label=i % 5, task_id=0)
per_class = {c: sum(1 for _, lab, _ in ring.items() if lab == c) for c in range(5)}
print("ring per-class counts:", per_class)

# Episodes draw N classes, K shots each, pooling the current task with the
# reservoir, and re-index labels into the episode's own candidate list.
task_feats = make_rng(2).standard_normal((30, 1)).astype(np.float32)
task_labels = np.repeat(np.arange(100, 106), 5)  # six fresh classes
ep = sample_episode(task_feats, task_labels, r, n_way=4, k_shot=3, rng=make_rng(3))
print("episode classes:", ep.class_ids, "labels:", ep.labels)

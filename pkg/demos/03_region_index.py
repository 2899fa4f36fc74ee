"""The quantized region index: build, probe, compare against exact scan.

Vectors route to inverted lists by their nearest coarse centroid; residuals
compress to 8 bytes. Probing more lists trades latency for recall, and the
same index answers nearest-neighbor (L2) and classifier (inner product)
queries.
"""

import time

import numpy as np

from rbir.evals import synthetic_ann_corpus
from rbir.ivfadc import IndexParams, InvertedIndex, exact_search, recall_at

X, rng = synthetic_ann_corpus(seed=3)
print(f"corpus: {X.shape[0]} vectors, dim {X.shape[1]}")

params = IndexParams(dim=64, nlist=256, pq_m=8, nprobe=64, seed=1)
t0 = time.time()
index = InvertedIndex.build(X, None, params)
print(f"built in {time.time() - t0:.1f}s; code size {params.pq_m} bytes/vector")

queries = X[rng.choice(len(X), 50, replace=False)] \
    + 0.01 * rng.normal(size=(50, 64)).astype(np.float32)

print("\nnprobe | recall@10 vs exact | secs/query")
for nprobe in (1, 8, 64, 256):
    total, t0 = 0.0, time.time()
    for q in queries:
        approx, _ = index.search(q, "l2", nprobe=nprobe, top_r=10)
        exact, _ = exact_search(X, q, "l2", top_r=10)
        total += recall_at(approx.tolist(), exact.tolist(), 10)
    print(f"  {nprobe:4d} |       {total / 50:.3f}        | "
          f"{(time.time() - t0) / 50:.4f}")

# inner-product mode: a linear classifier's best region, without decompression
w = rng.normal(size=64)
ids, scores = index.search(w, "inner_product", top_r=3)
exact_ids, exact_scores = exact_search(X, w, "inner_product", top_r=3)
print(f"\nmax inner product: approx top-3 {ids.tolist()} "
      f"(exact {exact_ids.tolist()})")

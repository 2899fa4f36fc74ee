"""Evaluation protocols shared by the CLI and the HTTP service.

Three reports: cluster reproduction (can learned constraint sets reproduce a
k-means clustering of layouts, mean P/R/F over clusters per stage budget),
relationship detection (recall/selectivity of stored per-predicate sets on a
triple test set), and ANN recall (index search versus exact scan at several
probe widths). All are seeded and deterministic.
"""

from __future__ import annotations

import numpy as np

from . import constraint as con
from . import geometry, langrec, mining
from .errors import InsufficientDataError
from .ivfadc import exact_search, recall_at


def synthetic_ann_corpus(seed=2024, n_super=250, n_offsets=4, group=10,
                         dim=64):
    """10k-vector hierarchical corpus for ANN benchmarks: well-separated
    super-clusters (one coarse cell each), a small set of shared sub-cluster
    offsets (learnable by the product quantizer), and echo groups of
    near-duplicates so top-10 boundaries align with group boundaries."""
    rng = np.random.default_rng(seed)
    supers = 2.0 * rng.normal(size=(n_super, dim))
    offsets = 0.35 * rng.normal(size=(n_offsets, dim))
    rows = []
    for s in range(n_super):
        for j in range(n_offsets):
            rows.append(supers[s] + offsets[j]
                        + 0.15 * rng.normal(size=(group, dim)))
    return np.vstack(rows).astype(np.float32), rng


def synthetic_layout_clusters(n_clusters=3, per_cluster=40, seed=0,
                              width=640.0, height=480.0, jitter=10.0):
    """Tight layout blobs around seeded two-object prototypes."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_clusters):
        proto = []
        for _ in range(2):
            w = rng.uniform(80, 0.4 * width)
            h = rng.uniform(80, 0.4 * height)
            x = rng.uniform(0, width - w)
            y = rng.uniform(0, height - h)
            proto.append(np.array([x, y, x + w, y + h]))
        s = proto[0] + rng.uniform(-jitter, jitter, size=(per_cluster, 4))
        o = proto[1] + rng.uniform(-jitter, jitter, size=(per_cluster, 4))
        rows.append(geometry.position_features_batch(width, height, [s, o]))
    return np.vstack(rows)


def eval_cluster_reproduction(seed=0, n_c_values=(1, 2, 3, 4, 5), n_clusters=3,
                              per_cluster=40, recall_floor=0.96,
                              min_cluster=5) -> dict:
    """Cluster synthetic layouts, treat the clustering as ground truth, and
    measure how well learned constraint sets reproduce each cluster."""
    feats = synthetic_layout_clusters(n_clusters, per_cluster, seed)
    params = mining.MiningParams(clusters=max(2, n_clusters),
                                 min_cluster=min_cluster, seed=seed)
    clustering = mining.cluster_layouts(feats, params)
    sizes = np.bincount(clustering.assignments, minlength=clustering.k)
    evaluated = [c for c in range(clustering.k) if sizes[c] >= min_cluster]
    if not evaluated:
        raise InsufficientDataError("every cluster fell below min_cluster")

    report = {"seed": seed, "clusters_evaluated": len(evaluated), "per_n_c": {}}
    for n_c in n_c_values:
        per_cluster_metrics, fp_counts = [], []
        for c in evaluated:
            mask = clustering.assignments == c
            data = con.LabeledFeatureSet(feats[mask], feats[~mask])
            cs = con.learn_cascade(data, con.CascadeParams(n_c, recall_floor),
                                   provenance="mining")
            per_cluster_metrics.append(con.evaluate_metrics(cs, data))
            fp_counts.append(int(con.passes_matrix(cs, feats[~mask]).sum()))
        report["per_n_c"][int(n_c)] = {
            "mean_precision": float(np.mean([m.precision for m in per_cluster_metrics])),
            "mean_recall": float(np.mean([m.recall for m in per_cluster_metrics])),
            "mean_f_value": float(np.mean([m.f_value for m in per_cluster_metrics])),
            "mean_fp_count": float(np.mean(fp_counts)),
        }
    return report


def eval_ann_recall(index, features, ks_values=(1, 8, 64), n_queries=100,
                    r=10, seed=0, noise=0.01) -> dict:
    """Recall@r of index search against the exact scan, per probe width.
    Queries are seeded noisy copies of dataset vectors."""
    X = np.asarray(features, dtype=np.float32)
    if X.shape[0] == 0:
        raise InsufficientDataError("empty dataset")
    rng = np.random.default_rng(seed)
    picks = rng.choice(X.shape[0], size=min(n_queries, X.shape[0]), replace=False)
    queries = X[picks] + noise * rng.normal(size=(len(picks), X.shape[1]))
    exact_tops = [exact_search(X, q, "l2", top_r=r)[0].tolist() for q in queries]
    report = {"r": r, "n_queries": len(picks), "per_ks": {}}
    for ks in ks_values:
        total = 0.0
        for q, exact_ids in zip(queries, exact_tops):
            approx_ids, _ = index.search(q, "l2", nprobe=int(ks), top_r=r)
            total += recall_at(approx_ids.tolist(), exact_ids, r)
        report["per_ks"][int(ks)] = {"recall": total / len(picks)}
    return report


def eval_relationship_detection(store, triples: langrec.TripleDataset,
                                min_test=10, spatial_only=None) -> dict:
    report = langrec.eval_relationship_detection(store, triples,
                                                 min_test=min_test,
                                                 spatial_only=spatial_only)
    return report.to_json()

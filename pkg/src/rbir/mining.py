"""Mining-based recommendation: cluster result layouts, learn a constraint
set per cluster.

Search results are points in position-feature space. They are standardized
per dimension (features mix px, px^2 and ratios; unstandardized k-means
would be dominated by the px^2 dimensions), clustered with seeded k-means,
and small clusters dropped. Each surviving cluster becomes an editable
recommendation: a cascade learned in the ORIGINAL feature space (thresholds
stay human-readable), the member closest to the centroid as a displayable
representative, and the training metrics of the learned set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import constraint as con
from .errors import InsufficientDataError
from .ivfadc import _pairwise_sqdist, train_kmeans

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class MiningParams:
    clusters: int = 10       # K
    min_cluster: int = 5     # clusters below this size are dropped
    cascade: con.CascadeParams = con.CascadeParams()
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")
        if self.min_cluster < 1:
            raise ValueError("min_cluster must be >= 1")


@dataclass
class ClusterResult:
    assignments: np.ndarray   # (n,) cluster id per input row
    centroids: np.ndarray     # (k, n_features), standardized space
    mean: np.ndarray
    std: np.ndarray
    reduced_k: bool           # true when fewer inputs than requested clusters

    @property
    def k(self):
        return self.centroids.shape[0]


def cluster_layouts(features, params: MiningParams) -> ClusterResult:
    """Standardize per dimension, then seeded k-means."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = X.shape[0]
    if n < 1:
        raise InsufficientDataError("no layouts to cluster")
    k = min(params.clusters, n)
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    Z = (X - mean) / std
    centroids = train_kmeans(Z, k, seed=params.seed, allow_duplicates=True)
    assignments = _pairwise_sqdist(Z, centroids).argmin(axis=1)
    return ClusterResult(assignments, centroids, mean, std,
                         reduced_k=k < params.clusters)


@dataclass
class MiningRecommendation:
    constraint_set: con.ConstraintSet
    representative: object        # caller's result ref (e.g. image id + boxes)
    cluster_size: int
    metrics: con.DetectionMetrics

    def to_json(self):
        return {
            "constraints": self.constraint_set.to_json(),
            "representative": self.representative,
            "cluster_size": self.cluster_size,
            "metrics": self.metrics.to_json(),
        }


def mine_recommendations(results, params: MiningParams = MiningParams()):
    """Cluster (ref, feature-vector) results and return one recommendation
    per surviving cluster, largest clusters first. Empty list when every
    cluster falls under min_cluster."""
    results = list(results)
    if len(results) < 1:
        raise InsufficientDataError("no results to mine")
    refs = [ref for ref, _ in results]
    X = np.vstack([np.asarray(vec, dtype=np.float64) for _, vec in results])
    clustering = cluster_layouts(X, params)
    Z = (X - clustering.mean) / clustering.std

    sizes = np.bincount(clustering.assignments, minlength=clustering.k)
    surviving = [c for c in range(clustering.k) if sizes[c] >= params.min_cluster]
    surviving.sort(key=lambda c: (-sizes[c], c))

    out = []
    for c in surviving:
        member_mask = clustering.assignments == c
        members = np.nonzero(member_mask)[0]
        data = con.LabeledFeatureSet(X[member_mask], X[~member_mask])
        cs = con.learn_cascade(data, params.cascade, provenance="mining")
        dist = ((Z[members] - clustering.centroids[c]) ** 2).sum(axis=1)
        representative = refs[int(members[int(dist.argmin())])]
        out.append(MiningRecommendation(
            constraint_set=cs,
            representative=representative,
            cluster_size=int(sizes[c]),
            metrics=con.evaluate_metrics(cs, data),
        ))
    return out

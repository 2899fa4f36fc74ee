"""Linear SVM training and the named classifier cache.

Category and attribute queries score regions by inner product with a weight
vector, so a classifier here is just a named weight vector plus a training
bias (kept for inspection, excluded from ranking: adding a constant to every
region score never changes the order). Training runs seeded stochastic
subgradient descent on the L2-regularized hinge loss with a 1/(lambda*t)
step schedule; identical inputs and seed give bitwise-identical weights.

The cache persists each classifier as `<name>.json` (metadata) plus
`<name>.f32` (little-endian float32 weights, bias appended last), written
atomically via temp-file rename. Reload is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, InsufficientDataError, NotFoundError

KINDS = ("category", "attribute")


@dataclass(frozen=True)
class LinearClassifier:
    name: str
    kind: str
    weights: np.ndarray  # (dim,) float32
    bias: float
    positives: int
    negatives: int

    @property
    def dim(self):
        return int(self.weights.shape[0])

    def scores(self, vectors) -> np.ndarray:
        """Region scores <w, v>; the bias is deliberately left out."""
        return np.asarray(vectors, dtype=np.float64) @ self.weights.astype(np.float64)


def svm_objective(weights, bias, X, y, lam):
    """L2-regularized mean hinge loss; the reference quantity for training.

    The bias is handled as an augmented constant feature, so it shares the
    regularizer. It still never enters retrieval scoring.
    """
    margins = y * (X @ weights + bias)
    hinge = np.maximum(0.0, 1.0 - margins).mean()
    return 0.5 * lam * (float(weights @ weights) + bias * bias) + float(hinge)


def train_svm(positives, negatives, name="", kind="category", lam=1e-2,
              epochs=60, seed=0) -> LinearClassifier:
    """Pegasos-style SGD on the hinge loss; deterministic given the seed.

    Uses the 1/(lambda*t) step schedule with a fresh seeded shuffle per
    epoch, and returns the average of the second-half iterates (suffix
    averaging), which lands within a fraction of a percent of the full-batch
    optimum on realistic data.
    """
    pos = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    neg = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if pos.shape[0] < 1 or neg.shape[0] < 1:
        raise InsufficientDataError("SVM training needs >=1 positive and >=1 negative")
    if pos.shape[1] != neg.shape[1]:
        raise DimensionMismatchError(
            f"positive dim {pos.shape[1]} != negative dim {neg.shape[1]}")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")

    X = np.hstack([np.vstack([pos, neg]),
                   np.ones((pos.shape[0] + neg.shape[0], 1))])
    y = np.concatenate([np.ones(pos.shape[0]), -np.ones(neg.shape[0])])
    n, dim_aug = X.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(dim_aug)
    avg = np.zeros(dim_aug)
    averaged = 0
    total = epochs * n
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            if y[i] * (X[i] @ w) < 1.0:
                w = (1.0 - eta * lam) * w + eta * y[i] * X[i]
            else:
                w = (1.0 - eta * lam) * w
            if t > total // 2:
                avg += w
                averaged += 1
    w = avg / max(averaged, 1)
    return LinearClassifier(name=name, kind=kind,
                            weights=w[:-1].astype(np.float32),
                            bias=float(np.float32(w[-1])),
                            positives=pos.shape[0], negatives=neg.shape[0])


_SAFE = re.compile(r"[^A-Za-z0-9._-]")


def _entry_stem(name: str) -> str:
    safe = _SAFE.sub("_", name)
    if safe != name or not safe:
        # keep sanitized names collision-free
        safe = f"{safe}-{hashlib.sha1(name.encode('utf-8')).hexdigest()[:8]}"
    return safe


class ClassifierCache:
    """Directory-backed store of named classifiers; writers are atomic."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, clf: LinearClassifier):
        if not clf.name:
            raise ValueError("classifier needs a non-empty name")
        stem = _entry_stem(clf.name)
        meta = {"name": clf.name, "kind": clf.kind, "dim": clf.dim,
                "positives": clf.positives, "negatives": clf.negatives}
        payload = np.concatenate([clf.weights.astype("<f4"),
                                  np.array([clf.bias], dtype="<f4")])
        for suffix, data in ((".json", json.dumps(meta).encode()),
                             (".f32", payload.tobytes())):
            tmp = self.root / f".{stem}{suffix}.tmp"
            tmp.write_bytes(data)
            os.replace(tmp, self.root / f"{stem}{suffix}")

    def get(self, name: str) -> LinearClassifier:
        stem = _entry_stem(name)
        meta_path = self.root / f"{stem}.json"
        if not meta_path.exists():
            raise NotFoundError(f"no cached classifier named {name!r}")
        meta = json.loads(meta_path.read_text())
        raw = np.frombuffer((self.root / f"{stem}.f32").read_bytes(), dtype="<f4")
        if raw.shape[0] != meta["dim"] + 1:
            raise DimensionMismatchError(
                f"classifier {name!r}: {raw.shape[0]} floats for dim {meta['dim']}")
        return LinearClassifier(name=meta["name"], kind=meta["kind"],
                                weights=raw[:-1].copy(), bias=float(raw[-1]),
                                positives=meta["positives"],
                                negatives=meta["negatives"])

    def names(self) -> list[str]:
        out = []
        for meta_path in sorted(self.root.glob("*.json")):
            out.append(json.loads(meta_path.read_text())["name"])
        return out

    def __contains__(self, name):
        return (self.root / f"{_entry_stem(name)}.json").exists()

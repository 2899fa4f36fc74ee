"""Language-prior relationship recommendation.

A pair of category names is mapped to relationship likelihoods by a linear
projection over concatenated word embeddings (multinomial logistic
regression, softmax output). Each relationship label also carries a learned
arity-2 position-constraint set, trained from annotated (subject, object,
predicate) triples with the same recall-floor cascade used for mining, which
is what keeps recall high despite noisy negatives. Recommending = predicting
likely predicates and attaching their stored constraint sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import constraint as con
from . import geometry
from .classifier import _entry_stem
from .errors import (FormatError, InsufficientDataError, NotFoundError, OovError)

# Predicates treated as purely spatial in evaluation reports, when present
# in the vocabulary.
DEFAULT_SPATIAL = ("on the left of", "on the right of", "above", "below",
                   "behind", "in the front of", "on the top of", "under",
                   "near", "inside")


class EmbeddingTable:
    """word -> vector map with case-folded lookups and mean-pooled phrases."""

    def __init__(self, vectors: dict, dim: int):
        self.vectors = vectors
        self.dim = dim

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        vectors = {}
        dim = None
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                if not line.strip():
                    continue
                if lineno == 1 and len(parts) == 2:
                    continue  # optional "count dim" header
                word = parts[0].casefold()
                try:
                    vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad embedding ({exc})") from exc
                if dim is None:
                    dim = vec.shape[0]
                elif vec.shape[0] != dim:
                    raise FormatError(f"{path}:{lineno}: dim {vec.shape[0]} != {dim}")
                vectors[word] = vec
        if dim is None:
            raise FormatError(f"empty embedding file {path}")
        return cls(vectors, dim)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"{len(self.vectors)} {self.dim}\n")
            for word in sorted(self.vectors):
                values = " ".join(repr(float(v)) for v in self.vectors[word])
                fh.write(f"{word} {values}\n")

    def embed(self, phrase: str) -> np.ndarray:
        """Mean of word vectors; any missing word raises OovError."""
        words = phrase.casefold().split()
        if not words:
            raise OovError(phrase)
        rows = []
        for word in words:
            if word not in self.vectors:
                raise OovError(word)
            rows.append(self.vectors[word])
        return np.mean(rows, axis=0)

    def __contains__(self, phrase):
        try:
            self.embed(phrase)
            return True
        except OovError:
            return False


@dataclass
class TripleDataset:
    subjects: list
    objects: list
    predicates: list
    subject_boxes: np.ndarray  # (n, 4) l,t,r,b
    object_boxes: np.ndarray
    widths: np.ndarray
    heights: np.ndarray

    def __len__(self):
        return len(self.predicates)

    def vocabulary(self):
        return sorted(set(self.predicates))

    def pair_features(self) -> np.ndarray:
        """Arity-2 position features, subject as O1 and object as O2."""
        return geometry.position_features_batch(
            self.widths, self.heights, [self.subject_boxes, self.object_boxes])

    @classmethod
    def load(cls, path) -> "TripleDataset":
        subjects, objects, predicates = [], [], []
        sboxes, oboxes, widths, heights = [], [], [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    subjects.append(str(obj["subject"]))
                    objects.append(str(obj["object"]))
                    predicates.append(str(obj["predicate"]))
                    sboxes.append([float(v) for v in obj["subject_box"]])
                    oboxes.append([float(v) for v in obj["object_box"]])
                    widths.append(float(obj["width"]))
                    heights.append(float(obj["height"]))
                except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                    raise FormatError(f"{path}:{lineno}: malformed triple ({exc})") \
                        from exc
        return cls(subjects, objects, predicates,
                   np.array(sboxes, dtype=np.float64).reshape(-1, 4),
                   np.array(oboxes, dtype=np.float64).reshape(-1, 4),
                   np.array(widths, dtype=np.float64),
                   np.array(heights, dtype=np.float64))

    def save(self, path):
        with open(path, "w") as fh:
            for i in range(len(self)):
                fh.write(json.dumps({
                    "subject": self.subjects[i], "object": self.objects[i],
                    "predicate": self.predicates[i],
                    "subject_box": list(self.subject_boxes[i]),
                    "object_box": list(self.object_boxes[i]),
                    "width": self.widths[i], "height": self.heights[i],
                }) + "\n")


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class RelationshipClassifier:
    vocabulary: tuple
    weights: np.ndarray  # (|V|, 2 * d_e)
    bias: np.ndarray     # (|V|,)
    oov_skipped: int = 0

    def likelihoods(self, pair_vector) -> np.ndarray:
        return softmax(self.weights @ np.asarray(pair_vector, dtype=np.float64)
                       + self.bias)

    def save(self, path_stem):
        path_stem = Path(path_stem)
        meta = {"vocabulary": list(self.vocabulary),
                "input_dim": int(self.weights.shape[1]),
                "oov_skipped": self.oov_skipped}
        path_stem.with_suffix(".json").write_text(json.dumps(meta) + "\n")
        payload = np.concatenate([self.weights.reshape(-1), self.bias])
        path_stem.with_suffix(".f32").write_bytes(
            payload.astype("<f4").tobytes())

    @classmethod
    def load(cls, path_stem) -> "RelationshipClassifier":
        path_stem = Path(path_stem)
        meta = json.loads(path_stem.with_suffix(".json").read_text())
        raw = np.frombuffer(path_stem.with_suffix(".f32").read_bytes(), dtype="<f4")
        v = len(meta["vocabulary"])
        d = meta["input_dim"]
        if raw.shape[0] != v * d + v:
            raise FormatError(f"relationship classifier payload has {raw.shape[0]} "
                              f"floats, expected {v * d + v}")
        return cls(tuple(meta["vocabulary"]),
                   raw[:v * d].astype(np.float64).reshape(v, d),
                   raw[v * d:].astype(np.float64),
                   meta.get("oov_skipped", 0))


def relationship_loss_and_grad(weights, bias, X, Y):
    """Mean cross-entropy and its analytic gradient (for training and the
    finite-difference check)."""
    probs = softmax(X @ weights.T + bias)
    n = X.shape[0]
    eps = 1e-300
    loss = -np.log(np.maximum(probs[np.arange(n), Y], eps)).mean()
    delta = probs
    delta[np.arange(n), Y] -= 1.0
    grad_w = delta.T @ X / n
    grad_b = delta.mean(axis=0)
    return loss, grad_w, grad_b


def _pair_matrix(triples, table):
    """Embedding rows for each triple; OOV triples are skipped and counted."""
    rows, labels, skipped = [], [], 0
    for subj, obj, pred in zip(triples.subjects, triples.objects,
                               triples.predicates):
        try:
            rows.append(np.concatenate([table.embed(subj), table.embed(obj)]))
            labels.append(pred)
        except OovError:
            skipped += 1
    return rows, labels, skipped


def train_relationship_classifier(triples: TripleDataset, table: EmbeddingTable,
                                  epochs=200, lr=1.0, seed=0, return_trace=False):
    """Full-batch gradient descent with halving line search: the training
    loss is non-increasing per epoch by construction, and runs are
    deterministic given the seed."""
    if len(triples) == 0:
        raise InsufficientDataError("empty triple dataset")
    rows, labels, skipped = _pair_matrix(triples, table)
    if not rows:
        raise InsufficientDataError("all triples were out of vocabulary")
    vocab = tuple(sorted(set(labels)))
    index = {p: i for i, p in enumerate(vocab)}
    X = np.vstack(rows)
    Y = np.array([index[p] for p in labels])

    rng = np.random.default_rng(seed)
    W = 1e-3 * rng.normal(size=(len(vocab), X.shape[1]))
    b = np.zeros(len(vocab))
    loss, grad_w, grad_b = relationship_loss_and_grad(W, b, X, Y)
    trace = [loss]
    for _ in range(epochs):
        step = lr
        for _ in range(40):
            W_try = W - step * grad_w
            b_try = b - step * grad_b
            new_loss, new_gw, new_gb = relationship_loss_and_grad(W_try, b_try, X, Y)
            if new_loss <= loss:
                W, b, loss, grad_w, grad_b = W_try, b_try, new_loss, new_gw, new_gb
                trace.append(loss)
                break
            step *= 0.5
        else:
            break  # no improving step at any scale: converged
    clf = RelationshipClassifier(vocab, W, b, skipped)
    return (clf, trace) if return_trace else clf


def predict_relationships(cat1, cat2, table: EmbeddingTable,
                          clf: RelationshipClassifier, top_m=5):
    """Top predicates for a category pair; ties break by vocabulary order."""
    pair = np.concatenate([table.embed(cat1), table.embed(cat2)])
    probs = clf.likelihoods(pair)
    order = np.lexsort((np.arange(len(probs)), -probs))
    return [(clf.vocabulary[i], float(probs[i])) for i in order[:top_m]]


def learn_relationship_constraints(triples: TripleDataset, predicate: str,
                                   params: con.CascadeParams = con.CascadeParams(),
                                   min_samples=10) -> con.ConstraintSet:
    """Cascade over pairwise position features: triples with the predicate
    are positives, every other triple is a negative."""
    mask = np.array([p == predicate for p in triples.predicates])
    if int(mask.sum()) < min_samples:
        raise InsufficientDataError(
            f"predicate {predicate!r} has {int(mask.sum())} samples, "
            f"needs {min_samples}")
    feats = triples.pair_features()
    data = con.LabeledFeatureSet(feats[mask], feats[~mask], arity=2)
    return con.learn_cascade(data, params, provenance="language")


class RelationshipConstraintStore:
    """Directory of per-predicate constraint sets plus a vocabulary manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _manifest(self):
        path = self.root / "manifest.json"
        if path.exists():
            return json.loads(path.read_text())
        return {"vocabulary": []}

    def put(self, predicate: str, cs: con.ConstraintSet):
        if cs.arity != 2:
            raise ValueError("relationship constraint sets are arity 2")
        (self.root / f"{_entry_stem(predicate)}.json").write_text(
            json.dumps({"predicate": predicate, "constraints": cs.to_json()}) + "\n")
        manifest = self._manifest()
        if predicate not in manifest["vocabulary"]:
            manifest["vocabulary"].append(predicate)
            manifest["vocabulary"].sort()
        (self.root / "manifest.json").write_text(json.dumps(manifest) + "\n")

    def get(self, predicate: str) -> con.ConstraintSet:
        path = self.root / f"{_entry_stem(predicate)}.json"
        if not path.exists():
            raise NotFoundError(f"no constraint set stored for {predicate!r}")
        obj = json.loads(path.read_text())
        return con.ConstraintSet.from_json(obj["constraints"])

    def predicates(self):
        return list(self._manifest()["vocabulary"])

    def __contains__(self, predicate):
        return (self.root / f"{_entry_stem(predicate)}.json").exists()


def recommend_language(cat1, cat2, table, clf, store, top_m=5,
                       min_likelihood=0.0):
    """(predicate, likelihood, constraint set) for the top predicted
    predicates that have a stored set; returns (recommendations, skipped)."""
    if not store.predicates():
        return [], []
    ranked = predict_relationships(cat1, cat2, table, clf, top_m)
    out, skipped = [], []
    for predicate, likelihood in ranked:
        if likelihood < min_likelihood:
            continue
        if predicate in store:
            out.append((predicate, likelihood, store.get(predicate)))
        else:
            skipped.append(predicate)
    return out, skipped


@dataclass
class RelationshipEvalReport:
    per_predicate: dict
    mean_all: dict
    mean_spatial: dict | None
    excluded: list
    spatial_predicates: list

    def to_json(self):
        return {
            "per_predicate": {k: v.to_json() for k, v in self.per_predicate.items()},
            "mean_all": self.mean_all,
            "mean_spatial": self.mean_spatial,
            "excluded": self.excluded,
            "spatial_predicates": self.spatial_predicates,
        }


def _mean_metrics(metrics_list):
    fields = ("precision", "recall", "f_value", "selectivity", "harmonic")
    return {f: float(np.mean([getattr(m, f) for m in metrics_list]))
            for f in fields}


def eval_relationship_detection(store: RelationshipConstraintStore,
                                triples: TripleDataset, min_test=10,
                                spatial_only=None) -> RelationshipEvalReport:
    """Per-predicate recall/selectivity of the stored constraint sets on a
    test set; predicates with fewer than min_test samples are excluded."""
    if len(triples) == 0:
        raise InsufficientDataError("empty test set")
    spatial_only = DEFAULT_SPATIAL if spatial_only is None else tuple(spatial_only)
    feats = triples.pair_features()
    labels = np.array(triples.predicates)
    per_predicate, excluded = {}, []
    for predicate in store.predicates():
        mask = labels == predicate
        if int(mask.sum()) < min_test:
            excluded.append(predicate)
            continue
        cs = store.get(predicate)
        passing = con.passes_matrix(cs, feats)
        tp = int((passing & mask).sum())
        fp = int((passing & ~mask).sum())
        per_predicate[predicate] = con.make_metrics(tp, fp, int(mask.sum()),
                                                    len(labels))
    if not per_predicate:
        raise InsufficientDataError(
            f"no stored predicate has {min_test}+ test samples")
    spatial = [p for p in per_predicate if p in spatial_only]
    return RelationshipEvalReport(
        per_predicate=per_predicate,
        mean_all=_mean_metrics(list(per_predicate.values())),
        mean_spatial=_mean_metrics([per_predicate[p] for p in spatial])
        if spatial else None,
        excluded=excluded,
        spatial_predicates=spatial,
    )

"""The multi-object query pipeline.

Each object query is resolved to a scoring vector (an example feature or a
classifier weight vector, plus optional attribute weights), searched
independently against the region index, and the per-object results are
merged into image scores: per object, an image scores its best region,
min-max normalized over that object's shortlist so example distances and
classifier margins are commensurable, then summed. Position constraints
filter the merged ranking last.

Filtering runs over a self-contained shortlist payload (per-image candidate
regions, their scores, and the position features of every region
combination). The server and any client filter the same payload with the
same rule, so constraint-only refinement never re-touches the index and the
two sides agree by construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import constraint as con
from . import geometry
from .errors import ArityMismatchError, DimensionMismatchError, NotFoundError

RELEVANCE_EPSILON = 1e-12   # guards 1/d^2 for exact-duplicate regions
DEFAULT_PAYLOAD_CAP = 500

# canvas-to-constraint rule: each canvas value x pins its feature to
# [0.9 x, 1.1 x], inclusive
CANVAS_BAND = 0.1
CANVAS_FEATURES = ("left/I.width", "right/I.width", "top/I.height",
                   "bottom/I.height")


@dataclass(frozen=True)
class ByExample:
    vector: object = None
    region_id: int | None = None

    def __post_init__(self):
        if (self.vector is None) == (self.region_id is None):
            raise ValueError("ByExample needs exactly one of vector, region_id")


@dataclass(frozen=True)
class ByCategory:
    name: str


@dataclass(frozen=True)
class ObjectQuery:
    target: object                # ByExample | ByCategory
    attributes: tuple = ()


@dataclass
class Query:
    objects: list
    constraint_set: con.ConstraintSet | None = None
    top_k: int = 20
    shortlist_r: int = 1000
    t: int = 1                    # regions per object considered for constraints
    nprobe: int | None = None
    include_failing: bool = False

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 3:
            raise ValueError(f"queries take 1 to 3 objects, got {len(self.objects)}")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.constraint_set is not None and \
                self.constraint_set.arity != len(self.objects):
            raise ArityMismatchError(
                f"constraint arity {self.constraint_set.arity} != "
                f"{len(self.objects)} query objects")


@dataclass
class ExecutionPlan:
    metric: str                   # l2 | inner_product
    vector: np.ndarray
    attribute_weights: list


@dataclass
class ImageResult:
    image_id: str
    image_score: float
    passes: bool
    regions: list                 # per object: {region_id, box, score, norm}
    position_features: np.ndarray

    def to_json(self):
        return {
            "image_id": self.image_id,
            "score": self.image_score,
            "passes": self.passes,
            "objects": self.regions,
            "features": [float(v) for v in self.position_features],
        }


def preprocess_object_query(obj: ObjectQuery, cache, index) -> ExecutionPlan:
    """Resolve an object query to its scoring vector and metric."""
    target = obj.target
    if isinstance(target, ByExample):
        if target.vector is not None:
            vector = np.asarray(target.vector, dtype=np.float64).reshape(-1)
        else:
            if int(target.region_id) not in index.regions:
                raise NotFoundError(f"region {target.region_id} is not indexed")
            vector = index.reconstruct(target.region_id)
        metric = "l2"
    elif isinstance(target, ByCategory):
        vector = cache.get(target.name).weights.astype(np.float64)
        metric = "inner_product"
    else:
        raise TypeError(f"unknown object query target {type(target).__name__}")
    if vector.shape[0] != index.params.dim:
        raise DimensionMismatchError(
            f"query vector dim {vector.shape[0]} != index dim {index.params.dim}")
    attribute_weights = [cache.get(name).weights.astype(np.float64)
                         for name in obj.attributes]
    return ExecutionPlan(metric, vector, attribute_weights)


def search_regions(plan: ExecutionPlan, index, shortlist_r=1000, nprobe=None,
                   t=1) -> dict:
    """Per-image top-t (region_id, combined score) for one object.

    Example queries rank by 1/(squared distance); classifier queries by the
    inner product; attribute scores are ADC inner products over the same
    shortlist, added on.
    """
    ids, raw = index.search(plan.vector, plan.metric, nprobe=nprobe,
                            top_r=shortlist_r)
    if plan.metric == "l2":
        relevance = 1.0 / (raw + RELEVANCE_EPSILON)
    else:
        relevance = raw.copy()
    for weights in plan.attribute_weights:
        relevance += index.score_regions(weights, ids, "inner_product")

    per_image = {}
    for rid, score in zip(ids.tolist(), relevance.tolist()):
        per_image.setdefault(index.regions[rid].image_id, []).append((rid, score))
    for image_id, entries in per_image.items():
        entries.sort(key=lambda e: (-e[1], e[0]))
        del entries[t:]
    return per_image


def merge(object_hits: list) -> list:
    """Union candidates, min-max normalize per object, sum, rank.

    Returns (image_id, final_score, per-object normalized scores) tuples in
    final order; ties break by image id. Missing objects contribute 0.
    """
    if not any(object_hits):
        return []
    candidates = sorted(set().union(*[hits.keys() for hits in object_hits]))
    norms = []
    for hits in object_hits:
        if hits:
            best = {img: entries[0][1] for img, entries in hits.items()}
            lo, hi = min(best.values()), max(best.values())
            span = hi - lo
            if span > 0:
                norms.append({img: (s - lo) / span for img, s in best.items()})
            else:
                norms.append({img: 1.0 for img in best})
        else:
            norms.append({})
    ranked = []
    for image_id in candidates:
        contributions = [n.get(image_id, 0.0) for n in norms]
        ranked.append((image_id, float(sum(contributions)), contributions))
    ranked.sort(key=lambda r: (-r[1], r[0]))
    return ranked


def build_payload(merged, object_hits, t, image_dims, arity,
                  payload_cap=DEFAULT_PAYLOAD_CAP) -> dict:
    """Self-contained shortlist: per image, per-object candidate regions and
    every region combination with its position features, in descending
    combined-score order."""
    # reuse each object's image-level affine map so region scores stay
    # commensurable across objects when ordering combinations
    affine = []
    for hits in object_hits:
        if hits:
            best = [entries[0][1] for entries in hits.values()]
            lo, hi = min(best), max(best)
            span = hi - lo if hi > lo else 1.0
            affine.append((lo, span))
        else:
            affine.append((0.0, 1.0))

    def norm(k, score):
        lo, span = affine[k]
        return (score - lo) / span

    images = []
    for image_id, final, contributions in merged[:payload_cap]:
        width, height = image_dims[image_id]
        meta = geometry.ImageMeta(image_id, width, height)
        per_object = []
        for k, hits in enumerate(object_hits):
            entries = hits.get(image_id, [])[:t]
            per_object.append([
                {"region_id": rid, "box": None, "score": score,
                 "norm": norm(k, score)}
                for rid, score in entries
            ])
        combos = []
        if all(per_object):
            for picks in itertools.product(*per_object):
                combo_score = sum(p["norm"] for p in picks)
                combos.append((tuple(p["region_id"] for p in picks),
                               combo_score, picks))
            combos.sort(key=lambda c: (-c[1], c[0]))
        images.append({
            "image_id": image_id,
            "score": final,
            "norms": contributions,
            "objects": per_object,
            "combos": combos,
            "meta": meta,
        })
    return {"arity": arity, "t": t, "images": images}


def attach_boxes_and_features(payload, index):
    """Fill region boxes and per-combination position features in place."""
    for image in payload["images"]:
        meta = image["meta"]
        for entries in image["objects"]:
            for entry in entries:
                entry["box"] = index.regions[entry["region_id"]].box.as_list()
        combos = []
        for region_ids, combo_score, picks in image["combos"]:
            boxes = [index.regions[rid].box for rid in region_ids]
            features = geometry.compute_position_features(meta, boxes)
            combos.append({"regions": list(region_ids), "score": combo_score,
                           "features": features})
        image["combos"] = combos
    return payload


def filter_and_rank(payload, constraint_set: con.ConstraintSet | None,
                    include_failing=False) -> list:
    """Evaluate region combinations against the constraints.

    Per image, the best-scoring combination that satisfies every constraint
    is chosen; images with no passing combination fail, keep their top
    combination for display, and are appended after passing images only when
    include_failing is set. Order within each group follows the merged rank.
    """
    if constraint_set is not None and constraint_set.arity != payload["arity"]:
        raise ArityMismatchError(
            f"constraint arity {constraint_set.arity} != payload arity "
            f"{payload['arity']}")
    passing, failing = [], []
    for image in payload["images"]:
        if not image["combos"]:
            continue
        chosen, passes = None, False
        if constraint_set is None or not constraint_set.constraints:
            chosen, passes = image["combos"][0], True
        else:
            for combo in image["combos"]:
                if con.satisfies_all(constraint_set, combo["features"]):
                    chosen, passes = combo, True
                    break
            if chosen is None:
                chosen, passes = image["combos"][0], False
        regions = []
        for k, rid in enumerate(chosen["regions"]):
            entry = next(e for e in image["objects"][k]
                         if e["region_id"] == rid)
            regions.append(dict(entry))
        result = ImageResult(
            image_id=image["image_id"],
            image_score=image["score"],
            passes=passes,
            regions=regions,
            position_features=np.asarray(chosen["features"], dtype=np.float64),
        )
        (passing if passes else failing).append(result)
    return passing + failing if include_failing else passing


def run_query(query: Query, index, cache, image_dims,
              payload_cap=DEFAULT_PAYLOAD_CAP):
    """Full pipeline: preprocess, per-object search, merge, filter.

    Returns (results, payload); the payload supports constraint-only
    re-filtering without touching the index again.
    """
    plans = [preprocess_object_query(obj, cache, index) for obj in query.objects]
    object_hits = [search_regions(plan, index, query.shortlist_r, query.nprobe,
                                  query.t) for plan in plans]
    merged = merge(object_hits)
    payload = build_payload(merged, object_hits, query.t, image_dims,
                            arity=len(query.objects), payload_cap=payload_cap)
    attach_boxes_and_features(payload, index)
    results = filter_and_rank(payload, query.constraint_set,
                              query.include_failing)
    return results[:query.top_k], payload


@dataclass(frozen=True)
class CanvasBox:
    """A dragged box in canvas fractions of the image dimensions."""

    object_index: int
    left: float
    top: float
    right: float
    bottom: float

    def clamped(self):
        l = min(max(self.left, 0.0), 1.0)
        t = min(max(self.top, 0.0), 1.0)
        r = min(max(self.right, 0.0), 1.0)
        b = min(max(self.bottom, 0.0), 1.0)
        return CanvasBox(self.object_index, l, t, min(max(r, l), 1.0),
                         min(max(b, t), 1.0))


def canvas_to_constraints(boxes) -> con.ConstraintSet:
    """Banded constraints pinning each box's four normalized location
    features to within 10% of the canvas value (8 constraints per box)."""
    boxes = [b.clamped() for b in boxes]
    if not boxes:
        raise ValueError("at least one canvas box is required")
    indices = [b.object_index for b in boxes]
    if len(set(indices)) != len(indices):
        raise ValueError(f"duplicate object indices: {sorted(indices)}")
    arity = max(indices) + 1
    cat = geometry.catalog(arity)
    constraints = []
    for box in sorted(boxes, key=lambda b: b.object_index):
        values = (box.left, box.right, box.top, box.bottom)
        for suffix, value in zip(CANVAS_FEATURES, values):
            f = cat.index_of(f"O{box.object_index + 1}.{suffix}")
            lo = min((1.0 - CANVAS_BAND) * value, (1.0 + CANVAS_BAND) * value)
            hi = max((1.0 - CANVAS_BAND) * value, (1.0 + CANVAS_BAND) * value)
            constraints.append(con.PositionConstraint(f, lo, 1))
            constraints.append(con.PositionConstraint(f, hi, -1))
    return con.ConstraintSet(arity, tuple(constraints), provenance="canvas")

"""Dataset ingestion, synthetic data generation, and engine-state persistence.

File formats:
  regions:  JSON lines, one image per line
            {"image_id", "width", "height", "regions": [{"box": [l,t,r,b]}, ...]}
  features: binary, magic "RBIRFEAT", little-endian u32 version=1, u32 dim,
            u64 row_count, then row-major float32; rows follow regions order
  manifest: JSON {name, dim, images, regions, file paths, fnv1a64 digests}
  labels:   JSON lines {"image_id", "region_index", "category"} and
            {"image_id", "predicate", "subject_index", "object_index"}
  triples:  JSON lines {"subject", "object", "predicate", "subject_box",
            "object_box", "width", "height"}

The synthetic generator builds scenes whose subject/object boxes satisfy a
named geometric predicate by a margin; the defining rules live in
PREDICATE_RULES so tests can re-derive every emitted label from the emitted
boxes. Everything is deterministic given the SyntheticSpec seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DimensionMismatchError, FormatError, GenerationError,
                     InsufficientDataError)
from .geometry import Box, ImageMeta, RegionRef

FEATURES_MAGIC = b"RBIRFEAT"
FEATURES_VERSION = 1


def fnv1a64(data: bytes) -> str:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


# -- features file -----------------------------------------------------------

def write_features(path, matrix):
    matrix = np.ascontiguousarray(np.atleast_2d(matrix), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<IIQ", FEATURES_VERSION, matrix.shape[1],
                             matrix.shape[0]))
        fh.write(matrix.tobytes())


def read_features(path):
    data = Path(path).read_bytes()
    if data[:8] != FEATURES_MAGIC:
        raise FormatError(f"bad features magic in {path}")
    version, dim, rows = struct.unpack_from("<IIQ", data, 8)
    if version != FEATURES_VERSION:
        raise FormatError(f"unsupported features version {version}")
    expected = 24 + 4 * dim * rows
    if len(data) != expected:
        raise FormatError(f"features file {path}: {len(data)} bytes, "
                          f"expected {expected}")
    return np.frombuffer(data, dtype="<f4", count=dim * rows, offset=24) \
        .reshape(rows, dim).copy()


# -- regions file ------------------------------------------------------------

def write_regions(path, images, regions_per_image):
    with open(path, "w") as fh:
        for meta, boxes in zip(images, regions_per_image):
            fh.write(json.dumps({
                "image_id": meta.image_id,
                "width": meta.width,
                "height": meta.height,
                "regions": [{"box": list(b.as_list())} for b in boxes],
            }) + "\n")


def read_regions(path):
    images, regions = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                meta = ImageMeta(str(obj["image_id"]), float(obj["width"]),
                                 float(obj["height"]))
                boxes = []
                for entry in obj["regions"]:
                    l, t, r, b = (float(v) for v in entry["box"])
                    boxes.append(Box(l, t, r, b).clamped(meta.width, meta.height))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            images.append(meta)
            regions.append(boxes)
    return images, regions


# -- manifest & dataset ------------------------------------------------------

@dataclass(frozen=True)
class DatasetManifest:
    name: str
    dim: int
    images: int
    regions: int
    regions_file: str
    features_file: str
    regions_digest: str
    features_digest: str

    def to_json(self):
        return {"name": self.name, "dim": self.dim, "images": self.images,
                "regions": self.regions, "regions_file": self.regions_file,
                "features_file": self.features_file,
                "regions_digest": self.regions_digest,
                "features_digest": self.features_digest}

    @classmethod
    def from_json(cls, obj):
        return cls(**{k: obj[k] for k in
                      ("name", "dim", "images", "regions", "regions_file",
                       "features_file", "regions_digest", "features_digest")})


@dataclass
class Dataset:
    manifest: DatasetManifest
    images: list
    regions: list          # flat RegionRef list; row k of features belongs to it
    features: np.ndarray   # (regions, dim) float32

    def image_meta(self, image_id):
        for meta in self.images:
            if meta.image_id == image_id:
                return meta
        raise KeyError(image_id)


def write_manifest(path, manifest: DatasetManifest):
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = DatasetManifest.from_json(json.loads(manifest_path.read_text()))
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad manifest {manifest_path}: {exc}") from exc
    base = manifest_path.parent
    regions_path = base / manifest.regions_file
    features_path = base / manifest.features_file
    for path, want in ((regions_path, manifest.regions_digest),
                       (features_path, manifest.features_digest)):
        if not path.exists():
            raise FormatError(f"dataset file missing: {path}")
        got = fnv1a64(path.read_bytes())
        if got != want:
            raise FormatError(f"digest mismatch for {path}: {got} != {want}")

    images, boxes_per_image = read_regions(regions_path)
    features = read_features(features_path)
    flat = [RegionRef(meta.image_id, k, box)
            for meta, boxes in zip(images, boxes_per_image)
            for k, box in enumerate(boxes)]
    if len(flat) != features.shape[0]:
        raise FormatError(
            f"row-count mismatch: {len(flat)} regions vs {features.shape[0]} "
            f"feature rows")
    if manifest.dim != features.shape[1]:
        raise FormatError(f"manifest dim {manifest.dim} != features dim "
                          f"{features.shape[1]}")
    return Dataset(manifest, images, flat, features)


# -- synthetic data ----------------------------------------------------------

# Defining geometric rule per scene template; the generator enforces each
# rule by at least `gap`, so labels are re-derivable from emitted boxes.
PREDICATE_RULES = {
    "left_of": lambda s, o, gap: o.left - s.right >= gap,
    "right_of": lambda s, o, gap: s.left - o.right >= gap,
    "above": lambda s, o, gap: o.top - s.bottom >= gap,
    "below": lambda s, o, gap: s.top - o.bottom >= gap,
    "on_top_of": lambda s, o, gap: (abs(s.bottom - o.top) <= 1.0 and
                                    min(s.right, o.right) - max(s.left, o.left) >= gap),
    "inside": lambda s, o, gap: (s.left >= o.left + gap and s.top >= o.top + gap and
                                 s.right <= o.right - gap and s.bottom <= o.bottom - gap),
    "overlaps": lambda s, o, gap: (min(s.right, o.right) - max(s.left, o.left) >= gap and
                                   min(s.bottom, o.bottom) - max(s.top, o.top) >= gap),
    "random": lambda s, o, gap: True,  # unconstrained filler scenes
}

DISTRACTOR_CATEGORY = "_noise"


@dataclass(frozen=True)
class CategorySpec:
    name: str
    prototype: np.ndarray  # unit-norm (dim,)
    sigma: float = 0.1


@dataclass
class SyntheticSpec:
    seed: int
    dim: int
    categories: list
    predicates: list
    images: int
    width: float = 640.0
    height: float = 480.0
    distractors: int = 2
    gap: float = 8.0
    min_side: float = 40.0
    max_side_frac: float = 0.35
    name: str = "synth"


def default_categories(names, dim, seed, sigma=0.1):
    rng = np.random.default_rng(seed)
    out = []
    for name in names:
        v = rng.normal(size=dim)
        out.append(CategorySpec(name, v / np.linalg.norm(v), sigma))
    return out


def _rand_box(rng, width, height, min_side, max_side):
    w = rng.uniform(min_side, max_side)
    h = rng.uniform(min_side, max_side)
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return Box(x, y, x + w, y + h)


def sample_scene_boxes(predicate, rng, width, height, gap, min_side, max_side):
    """Subject and object boxes satisfying `predicate` by margin >= gap."""
    if predicate not in PREDICATE_RULES:
        raise GenerationError(f"unknown scene template {predicate!r}")
    rule = PREDICATE_RULES[predicate]
    if 2 * min_side + gap > min(width, height):
        raise GenerationError(f"template {predicate!r}: image {width}x{height} "
                              f"cannot fit two {min_side}px boxes with gap {gap}")
    for _ in range(200):
        if predicate == "left_of":
            s = _rand_box_in(rng, 0, 0, width / 2 - gap / 2, height, min_side, max_side)
            o = _rand_box_in(rng, width / 2 + gap / 2, 0, width, height,
                             min_side, max_side)
        elif predicate == "right_of":
            o = _rand_box_in(rng, 0, 0, width / 2 - gap / 2, height, min_side, max_side)
            s = _rand_box_in(rng, width / 2 + gap / 2, 0, width, height,
                             min_side, max_side)
        elif predicate == "above":
            s = _rand_box_in(rng, 0, 0, width, height / 2 - gap / 2, min_side, max_side)
            o = _rand_box_in(rng, 0, height / 2 + gap / 2, width, height,
                             min_side, max_side)
        elif predicate == "below":
            o = _rand_box_in(rng, 0, 0, width, height / 2 - gap / 2, min_side, max_side)
            s = _rand_box_in(rng, 0, height / 2 + gap / 2, width, height,
                             min_side, max_side)
        elif predicate == "on_top_of":
            o = _rand_box_in(rng, 0, height / 2, width, height, min_side, max_side)
            sw = rng.uniform(min_side, max_side)
            sh = rng.uniform(min_side, min(max_side, o.top)) if o.top > min_side else None
            if sh is None:
                continue
            sx = rng.uniform(max(0.0, o.left - sw + gap), min(o.right - gap, width - sw))
            s = Box(sx, o.top - sh, sx + sw, o.top)
        elif predicate == "inside":
            need = 2 * gap + min_side
            ow = rng.uniform(need + 1, max(need + 2, 2 * max_side))
            oh = rng.uniform(need + 1, max(need + 2, 2 * max_side))
            if ow > width or oh > height:
                continue
            ox = rng.uniform(0, width - ow)
            oy = rng.uniform(0, height - oh)
            o = Box(ox, oy, ox + ow, oy + oh)
            sw = rng.uniform(min_side, ow - 2 * gap)
            sh = rng.uniform(min_side, oh - 2 * gap)
            sx = rng.uniform(o.left + gap, o.right - gap - sw)
            sy = rng.uniform(o.top + gap, o.bottom - gap - sh)
            s = Box(sx, sy, sx + sw, sy + sh)
        elif predicate == "overlaps":
            o = _rand_box(rng, width, height, min_side, max_side)
            sw = rng.uniform(min_side, max_side)
            sh = rng.uniform(min_side, max_side)
            sx = rng.uniform(max(0.0, o.left - sw + gap), min(o.right - gap, width - sw))
            sy = rng.uniform(max(0.0, o.top - sh + gap), min(o.bottom - gap, height - sh))
            s = Box(sx, sy, sx + sw, sy + sh)
        else:  # random
            s = _rand_box(rng, width, height, min_side, max_side)
            o = _rand_box(rng, width, height, min_side, max_side)
        if rule(s, o, gap) and _in_bounds(s, width, height) and _in_bounds(o, width, height):
            return s, o
    raise GenerationError(f"template {predicate!r}: no valid layout found")


def _rand_box_in(rng, x0, y0, x1, y1, min_side, max_side):
    w = rng.uniform(min_side, min(max_side, x1 - x0))
    h = rng.uniform(min_side, min(max_side, y1 - y0))
    x = rng.uniform(x0, x1 - w)
    y = rng.uniform(y0, y1 - h)
    return Box(x, y, x + w, y + h)


def _in_bounds(box, width, height):
    return box.left >= 0 and box.top >= 0 and box.right <= width and box.bottom <= height


@dataclass
class SyntheticResult:
    manifest_path: Path
    manifest: DatasetManifest
    labels_path: Path
    triples_path: Path
    embeddings_path: Path
    category_labels: list   # (image_id, region_index, category)
    predicate_labels: list  # (image_id, predicate, subject_index, object_index)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> SyntheticResult:
    """Write a full synthetic dataset (regions, features, manifest, labels,
    triples). Deterministic: the same spec produces byte-identical files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    if len(spec.categories) < 1:
        raise GenerationError("at least one category is required")
    max_side = spec.max_side_frac * min(spec.width, spec.height)

    images, regions_per_image, rows = [], [], []
    category_labels, predicate_labels, triple_lines = [], [], []

    def feature_row(proto, sigma):
        v = proto + sigma * rng.normal(size=spec.dim)
        return (v / max(np.linalg.norm(v), 1e-12)).astype(np.float32)

    for i in range(spec.images):
        image_id = f"{spec.name}-{i:05d}"
        meta = ImageMeta(image_id, spec.width, spec.height)
        predicate = spec.predicates[i % len(spec.predicates)]
        sbox, obox = sample_scene_boxes(predicate, rng, spec.width, spec.height,
                                        spec.gap, spec.min_side, max_side)
        if len(spec.categories) >= 2:
            si, oi = rng.choice(len(spec.categories), size=2, replace=False)
        else:
            si = oi = 0
        subject, objekt = spec.categories[int(si)], spec.categories[int(oi)]

        boxes = [sbox, obox]
        rows.append(feature_row(subject.prototype, subject.sigma))
        rows.append(feature_row(objekt.prototype, objekt.sigma))
        category_labels.append((image_id, 0, subject.name))
        category_labels.append((image_id, 1, objekt.name))
        for d in range(spec.distractors):
            boxes.append(_rand_box(rng, spec.width, spec.height, spec.min_side,
                                   max_side))
            noise = rng.normal(size=spec.dim)
            rows.append((noise / np.linalg.norm(noise)).astype(np.float32))
            category_labels.append((image_id, 2 + d, DISTRACTOR_CATEGORY))
        predicate_labels.append((image_id, predicate, 0, 1))
        triple_lines.append({
            "subject": subject.name, "object": objekt.name, "predicate": predicate,
            "subject_box": sbox.as_list(), "object_box": obox.as_list(),
            "width": spec.width, "height": spec.height,
        })
        images.append(meta)
        regions_per_image.append(boxes)

    regions_path = out_dir / "regions.jsonl"
    features_path = out_dir / "features.bin"
    labels_path = out_dir / "labels.jsonl"
    triples_path = out_dir / "triples.jsonl"
    write_regions(regions_path, images, regions_per_image)
    feature_matrix = (np.vstack(rows) if rows
                      else np.empty((0, spec.dim), dtype=np.float32))
    write_features(features_path, feature_matrix)
    with open(labels_path, "w") as fh:
        for image_id, region_index, category in category_labels:
            fh.write(json.dumps({"image_id": image_id, "region_index": region_index,
                                 "category": category}) + "\n")
        for image_id, predicate, s_idx, o_idx in predicate_labels:
            fh.write(json.dumps({"image_id": image_id, "predicate": predicate,
                                 "subject_index": s_idx, "object_index": o_idx}) + "\n")
    with open(triples_path, "w") as fh:
        for line in triple_lines:
            fh.write(json.dumps(line) + "\n")

    # seeded embeddings for the category names, so the language route works
    # out of the box on synthetic data
    embeddings_path = out_dir / "embeddings.txt"
    emb_rng = np.random.default_rng(spec.seed + 1)
    emb_dim = 16
    with open(embeddings_path, "w") as fh:
        fh.write(f"{len(spec.categories)} {emb_dim}\n")
        for cat in spec.categories:
            vec = emb_rng.normal(size=emb_dim)
            vec /= np.linalg.norm(vec)
            fh.write(cat.name.casefold() + " "
                     + " ".join(repr(float(v)) for v in vec) + "\n")

    manifest = DatasetManifest(
        name=spec.name, dim=spec.dim, images=len(images),
        regions=int(feature_matrix.shape[0]),
        regions_file=regions_path.name, features_file=features_path.name,
        regions_digest=fnv1a64(regions_path.read_bytes()),
        features_digest=fnv1a64(features_path.read_bytes()),
    )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, manifest)
    return SyntheticResult(manifest_path, manifest, labels_path, triples_path,
                           embeddings_path, category_labels, predicate_labels)


def load_labels(path):
    """Split a labels file into category rows and predicate rows."""
    categories, predicates = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed label ({exc})") from exc
            if "category" in obj:
                categories.append((obj["image_id"], int(obj["region_index"]),
                                   obj["category"]))
            else:
                predicates.append((obj["image_id"], obj["predicate"],
                                   int(obj["subject_index"]), int(obj["object_index"])))
    return categories, predicates


# -- engine state ------------------------------------------------------------

@dataclass
class EngineState:
    """Everything a serving process needs, loadable from one directory."""

    index: object | None = None            # ivfadc.InvertedIndex
    dataset: Dataset | None = None
    classifiers: object | None = None      # classifier.ClassifierCache
    embeddings: object | None = None       # langrec.EmbeddingTable
    rel_classifier: object | None = None   # langrec.RelationshipClassifier
    rel_store: object | None = None        # langrec.RelationshipConstraintStore
    warnings: list = field(default_factory=list)


def save_state(state_dir, state: EngineState):
    # deferred imports: store is below classifier/langrec in the module graph
    from .classifier import ClassifierCache
    from .langrec import RelationshipConstraintStore

    state_dir = Path(state_dir)
    state_dir.mkdir(parents=True, exist_ok=True)
    meta = {"version": 1}
    if state.index is not None:
        state.index.save(state_dir / "index.ivf")
        meta["index"] = "index.ivf"
        meta["dim"] = state.index.params.dim
    if state.dataset is not None:
        dataset_dir = state_dir / "dataset"
        dataset_dir.mkdir(exist_ok=True)
        # re-emit the dataset files so the state dir is self-contained
        _write_dataset_copy(dataset_dir, state.dataset)
        meta["dataset_manifest"] = "dataset/manifest.json"
    if state.classifiers is not None:
        target_dir = state_dir / "classifiers"
        if state.classifiers.root != target_dir:
            target = ClassifierCache(target_dir)
            for name in state.classifiers.names():
                target.put(state.classifiers.get(name))
        meta["classifiers"] = "classifiers"
    if state.embeddings is not None:
        state.embeddings.save(state_dir / "embeddings.txt")
        meta["embeddings"] = "embeddings.txt"
    if state.rel_classifier is not None:
        state.rel_classifier.save(state_dir / "rel_classifier")
        meta["rel_classifier"] = "rel_classifier"
    if state.rel_store is not None:
        target_dir = state_dir / "relationships"
        if state.rel_store.root != target_dir:
            target = RelationshipConstraintStore(target_dir)
            for predicate in state.rel_store.predicates():
                target.put(predicate, state.rel_store.get(predicate))
        meta["relationships"] = "relationships"
    (state_dir / "state.json").write_text(json.dumps(meta, indent=2) + "\n")


def _write_dataset_copy(dataset_dir, dataset: Dataset):
    regions_per_image = {}
    for ref in dataset.regions:
        regions_per_image.setdefault(ref.image_id, []).append(ref)
    ordered = [[ref.box for ref in sorted(regions_per_image.get(m.image_id, []),
                                          key=lambda r: r.region_index)]
               for m in dataset.images]
    write_regions(dataset_dir / "regions.jsonl", dataset.images, ordered)
    write_features(dataset_dir / "features.bin", dataset.features)
    manifest = DatasetManifest(
        name=dataset.manifest.name, dim=dataset.manifest.dim,
        images=len(dataset.images), regions=len(dataset.regions),
        regions_file="regions.jsonl", features_file="features.bin",
        regions_digest=fnv1a64((dataset_dir / "regions.jsonl").read_bytes()),
        features_digest=fnv1a64((dataset_dir / "features.bin").read_bytes()),
    )
    write_manifest(dataset_dir / "manifest.json", manifest)


def load_state(state_dir) -> EngineState:
    from .classifier import ClassifierCache
    from .ivfadc import InvertedIndex
    from .langrec import (EmbeddingTable, RelationshipClassifier,
                          RelationshipConstraintStore)

    state_dir = Path(state_dir)
    state = EngineState()
    meta_path = state_dir / "state.json"
    if not meta_path.exists():
        state.warnings.append(f"no state.json in {state_dir}; starting empty")
        return state
    meta = json.loads(meta_path.read_text())

    if "index" in meta:
        index_path = state_dir / meta["index"]
        if index_path.exists():
            state.index = InvertedIndex.load(index_path)
        else:
            state.warnings.append(f"index file missing: {index_path}")
    if "dataset_manifest" in meta:
        manifest_path = state_dir / meta["dataset_manifest"]
        if manifest_path.exists():
            state.dataset = load_dataset(manifest_path)
        else:
            state.warnings.append(f"dataset manifest missing: {manifest_path}")
    cache_dir = state_dir / meta.get("classifiers", "classifiers")
    if cache_dir.is_dir():
        state.classifiers = ClassifierCache(cache_dir)
    else:
        state.warnings.append("classifier cache missing; starting empty")
        state.classifiers = ClassifierCache(state_dir / "classifiers")
    if "embeddings" in meta and (state_dir / meta["embeddings"]).exists():
        state.embeddings = EmbeddingTable.load(state_dir / meta["embeddings"])
    if "rel_classifier" in meta and \
            (state_dir / (meta["rel_classifier"] + ".json")).exists():
        state.rel_classifier = RelationshipClassifier.load(
            state_dir / meta["rel_classifier"])
    rel_dir = state_dir / meta.get("relationships", "relationships")
    if rel_dir.is_dir():
        state.rel_store = RelationshipConstraintStore(rel_dir)

    _validate_dims(state)
    return state


def _validate_dims(state: EngineState):
    dims = {}
    if state.index is not None:
        dims["index"] = state.index.params.dim
    if state.dataset is not None:
        dims["dataset"] = state.dataset.manifest.dim
    if state.classifiers is not None:
        for name in state.classifiers.names():
            dims[f"classifier {name!r}"] = state.classifiers.get(name).dim
    values = set(dims.values())
    if len(values) > 1:
        parts = ", ".join(f"{k}: D={v}" for k, v in sorted(dims.items()))
        raise DimensionMismatchError(f"components disagree on dimension ({parts})")

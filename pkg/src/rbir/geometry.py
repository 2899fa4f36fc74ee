"""Box arithmetic and the position-feature catalog.

Object layouts are described by a fixed ordered set of scalar descriptors:
per-object size/location/aspect blocks (19 each), directed pairwise relation
blocks (22 per ordered pair), and a joint block for three objects (24).
Totals are 19 / 82 / 213 for 1 / 2 / 3 objects. Constraint learning, mining,
and the query engine all address features by catalog index, so the ordering
defined here is a compatibility contract and must never be reshuffled.

All descriptor formulas accept either scalars or aligned numpy arrays, which
gives a single code path for one layout and for batches of thousands.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArityError

# Every ratio with a possibly-zero denominator is guarded at this floor so
# degenerate (zero-area) proposals still produce finite features.
DENOM_FLOOR = 1e-6

ARITY_SIZES = {1: 19, 2: 82, 3: 213}


def _div(num, den):
    return num / np.maximum(den, DENOM_FLOOR)


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel space, origin top-left, corner form."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        if self.right < self.left or self.bottom < self.top:
            raise ValueError(f"inverted box: {self}")

    @classmethod
    def from_xywh(cls, x, y, w, h):
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    @property
    def width(self):
        return self.right - self.left

    @property
    def height(self):
        return self.bottom - self.top

    @property
    def area(self):
        return self.width * self.height

    @property
    def cx(self):
        return 0.5 * (self.left + self.right)

    @property
    def cy(self):
        return 0.5 * (self.top + self.bottom)

    def clamped(self, width, height):
        """Clamp to [0, width] x [0, height], preserving corner ordering."""
        l = min(max(self.left, 0.0), width)
        r = min(max(self.right, 0.0), width)
        t = min(max(self.top, 0.0), height)
        b = min(max(self.bottom, 0.0), height)
        return Box(l, t, r, b)

    def as_list(self):
        return [self.left, self.top, self.right, self.bottom]


@dataclass(frozen=True)
class ImageMeta:
    image_id: str
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"non-positive image size: {self.width}x{self.height}")


@dataclass(frozen=True)
class RegionRef:
    image_id: str
    region_index: int
    box: Box


def box_geometry(a: Box, b: Box):
    """Areas, intersection, bounding (union) box and IoU of two boxes."""
    iw = max(0.0, min(a.right, b.right) - max(a.left, b.left))
    ih = max(0.0, min(a.bottom, b.bottom) - max(a.top, b.top))
    inter = iw * ih
    union_box = Box(
        min(a.left, b.left), min(a.top, b.top),
        max(a.right, b.right), max(a.bottom, b.bottom),
    )
    denom = a.area + b.area - inter
    iou = inter / denom if denom > 0 else 0.0
    return a.area, b.area, inter, union_box, iou


# --------------------------------------------------------------------------
# Descriptor tables. Each entry is (name template, unit, shift class, fn).
# The shift class records how the value responds to translating every box by
# (dx, dy) at fixed image size: None = invariant, "x"/"y" = moves by dx/dy,
# "xn"/"yn" = moves by dx/I.width / dy/I.height. Units follow {px, px2,
# ratio}; px scales linearly under uniform rescaling, px2 quadratically,
# ratio not at all.
# --------------------------------------------------------------------------


class _Terms:
    """Precomputed per-box terms; fields are scalars or aligned arrays."""

    __slots__ = ("left", "top", "right", "bottom", "width", "height", "area",
                 "cx", "cy", "diag")

    def __init__(self, left, top, right, bottom):
        self.left = left
        self.top = top
        self.right = right
        self.bottom = bottom
        self.width = right - left
        self.height = bottom - top
        self.area = self.width * self.height
        self.cx = 0.5 * (left + right)
        self.cy = 0.5 * (top + bottom)
        self.diag = np.sqrt(self.width ** 2 + self.height ** 2)


class _ImgTerms:
    __slots__ = ("width", "height", "area", "diag")

    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.area = width * height
        self.diag = np.sqrt(width ** 2 + height ** 2)


def _inter_area(a, b):
    iw = np.maximum(0.0, np.minimum(a.right, b.right) - np.maximum(a.left, b.left))
    ih = np.maximum(0.0, np.minimum(a.bottom, b.bottom) - np.maximum(a.top, b.top))
    return iw * ih


def _union_terms(*boxes):
    return _Terms(
        functools.reduce(np.minimum, (v.left for v in boxes)),
        functools.reduce(np.minimum, (v.top for v in boxes)),
        functools.reduce(np.maximum, (v.right for v in boxes)),
        functools.reduce(np.maximum, (v.bottom for v in boxes)),
    )


def _center_dist(a, b):
    return np.sqrt((a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2)


_PER_OBJECT = [
    ("O{i}.width", "px", None, lambda m, a: a.width),
    ("O{i}.height", "px", None, lambda m, a: a.height),
    ("O{i}.area", "px2", None, lambda m, a: a.area),
    ("O{i}.width/I.width", "ratio", None, lambda m, a: _div(a.width, m.width)),
    ("O{i}.height/I.height", "ratio", None, lambda m, a: _div(a.height, m.height)),
    ("O{i}.area/I.area", "ratio", None, lambda m, a: _div(a.area, m.area)),
    ("O{i}.left", "px", "x", lambda m, a: a.left),
    ("O{i}.right", "px", "x", lambda m, a: a.right),
    ("O{i}.top", "px", "y", lambda m, a: a.top),
    ("O{i}.bottom", "px", "y", lambda m, a: a.bottom),
    ("O{i}.cx", "px", "x", lambda m, a: a.cx),
    ("O{i}.cy", "px", "y", lambda m, a: a.cy),
    ("O{i}.left/I.width", "ratio", "xn", lambda m, a: _div(a.left, m.width)),
    ("O{i}.right/I.width", "ratio", "xn", lambda m, a: _div(a.right, m.width)),
    ("O{i}.top/I.height", "ratio", "yn", lambda m, a: _div(a.top, m.height)),
    ("O{i}.bottom/I.height", "ratio", "yn", lambda m, a: _div(a.bottom, m.height)),
    ("O{i}.cx/I.width", "ratio", "xn", lambda m, a: _div(a.cx, m.width)),
    ("O{i}.cy/I.height", "ratio", "yn", lambda m, a: _div(a.cy, m.height)),
    ("O{i}.height/O{i}.width", "ratio", None, lambda m, a: _div(a.height, a.width)),
]

_PAIR = [
    ("O{i}.left-O{j}.right", "px", None, lambda m, a, b: a.left - b.right),
    ("O{i}.top-O{j}.bottom", "px", None, lambda m, a, b: a.top - b.bottom),
    ("(O{i}.left-O{j}.right)/I.width", "ratio", None,
     lambda m, a, b: _div(a.left - b.right, m.width)),
    ("(O{i}.top-O{j}.bottom)/I.height", "ratio", None,
     lambda m, a, b: _div(a.top - b.bottom, m.height)),
    ("O{i}.cx-O{j}.cx", "px", None, lambda m, a, b: a.cx - b.cx),
    ("O{i}.cy-O{j}.cy", "px", None, lambda m, a, b: a.cy - b.cy),
    ("(O{i}.cx-O{j}.cx)/I.width", "ratio", None,
     lambda m, a, b: _div(a.cx - b.cx, m.width)),
    ("(O{i}.cy-O{j}.cy)/I.height", "ratio", None,
     lambda m, a, b: _div(a.cy - b.cy, m.height)),
    ("O{i}.width/O{j}.width", "ratio", None, lambda m, a, b: _div(a.width, b.width)),
    ("O{i}.height/O{j}.height", "ratio", None, lambda m, a, b: _div(a.height, b.height)),
    ("O{i}.area/O{j}.area", "ratio", None, lambda m, a, b: _div(a.area, b.area)),
    ("inter(O{i},O{j})/O{i}.area", "ratio", None,
     lambda m, a, b: _div(_inter_area(a, b), a.area)),
    ("O{i}.left-O{j}.left", "px", None, lambda m, a, b: a.left - b.left),
    ("O{i}.right-O{j}.right", "px", None, lambda m, a, b: a.right - b.right),
    ("O{i}.top-O{j}.top", "px", None, lambda m, a, b: a.top - b.top),
    ("O{i}.bottom-O{j}.bottom", "px", None, lambda m, a, b: a.bottom - b.bottom),
    ("(O{i}.left-O{j}.left)/I.width", "ratio", None,
     lambda m, a, b: _div(a.left - b.left, m.width)),
    ("(O{i}.right-O{j}.right)/I.width", "ratio", None,
     lambda m, a, b: _div(a.right - b.right, m.width)),
    ("(O{i}.top-O{j}.top)/I.height", "ratio", None,
     lambda m, a, b: _div(a.top - b.top, m.height)),
    ("(O{i}.bottom-O{j}.bottom)/I.height", "ratio", None,
     lambda m, a, b: _div(a.bottom - b.bottom, m.height)),
    ("dist(O{i}.c,O{j}.c)/O{j}.diag", "ratio", None,
     lambda m, a, b: _div(_center_dist(a, b), b.diag)),
    ("union(O{i},O{j}).area/O{i}.area", "ratio", None,
     lambda m, a, b: _div(_union_terms(a, b).area, a.area)),
]


def _triple_inter_area(a, b, c):
    iw = np.maximum(0.0, functools.reduce(np.minimum, (a.right, b.right, c.right))
                    - functools.reduce(np.maximum, (a.left, b.left, c.left)))
    ih = np.maximum(0.0, functools.reduce(np.minimum, (a.bottom, b.bottom, c.bottom))
                    - functools.reduce(np.maximum, (a.top, b.top, c.top)))
    return iw * ih


def _pair_dists(a, b, c):
    return _center_dist(a, b), _center_dist(a, c), _center_dist(b, c)


def _max_pair_dist(a, b, c):
    return functools.reduce(np.maximum, _pair_dists(a, b, c))


def _min_pair_dist(a, b, c):
    return functools.reduce(np.minimum, _pair_dists(a, b, c))


def _std3(x1, x2, x3):
    mean = (x1 + x2 + x3) / 3.0
    return np.sqrt(((x1 - mean) ** 2 + (x2 - mean) ** 2 + (x3 - mean) ** 2) / 3.0)


_TRIPLE = [
    ("union(O1,O2,O3).width", "px", None,
     lambda m, a, b, c: _union_terms(a, b, c).width),
    ("union(O1,O2,O3).height", "px", None,
     lambda m, a, b, c: _union_terms(a, b, c).height),
    ("union(O1,O2,O3).area", "px2", None,
     lambda m, a, b, c: _union_terms(a, b, c).area),
    ("union(O1,O2,O3).width/I.width", "ratio", None,
     lambda m, a, b, c: _div(_union_terms(a, b, c).width, m.width)),
    ("union(O1,O2,O3).height/I.height", "ratio", None,
     lambda m, a, b, c: _div(_union_terms(a, b, c).height, m.height)),
    ("union(O1,O2,O3).area/I.area", "ratio", None,
     lambda m, a, b, c: _div(_union_terms(a, b, c).area, m.area)),
    ("mean(O.cx)", "px", "x", lambda m, a, b, c: (a.cx + b.cx + c.cx) / 3.0),
    ("mean(O.cy)", "px", "y", lambda m, a, b, c: (a.cy + b.cy + c.cy) / 3.0),
    ("mean(O.cx)/I.width", "ratio", "xn",
     lambda m, a, b, c: _div((a.cx + b.cx + c.cx) / 3.0, m.width)),
    ("mean(O.cy)/I.height", "ratio", "yn",
     lambda m, a, b, c: _div((a.cy + b.cy + c.cy) / 3.0, m.height)),
    ("max_dist(O.c)", "px", None, lambda m, a, b, c: _max_pair_dist(a, b, c)),
    ("min_dist(O.c)", "px", None, lambda m, a, b, c: _min_pair_dist(a, b, c)),
    ("max_dist(O.c)/I.diag", "ratio", None,
     lambda m, a, b, c: _div(_max_pair_dist(a, b, c), m.diag)),
    ("min_dist(O.c)/I.diag", "ratio", None,
     lambda m, a, b, c: _div(_min_pair_dist(a, b, c), m.diag)),
    ("sum(O.area)", "px2", None, lambda m, a, b, c: a.area + b.area + c.area),
    ("sum(O.area)/I.area", "ratio", None,
     lambda m, a, b, c: _div(a.area + b.area + c.area, m.area)),
    ("sum(O.area)/union(O1,O2,O3).area", "ratio", None,
     lambda m, a, b, c: _div(a.area + b.area + c.area, _union_terms(a, b, c).area)),
    ("inter(O1,O2,O3).area", "px2", None,
     lambda m, a, b, c: _triple_inter_area(a, b, c)),
    ("inter(O1,O2,O3).area/union(O1,O2,O3).area", "ratio", None,
     lambda m, a, b, c: _div(_triple_inter_area(a, b, c), _union_terms(a, b, c).area)),
    ("std(O.cx)/I.width", "ratio", None,
     lambda m, a, b, c: _div(_std3(a.cx, b.cx, c.cx), m.width)),
    ("std(O.cy)/I.height", "ratio", None,
     lambda m, a, b, c: _div(_std3(a.cy, b.cy, c.cy), m.height)),
    ("union(O1,O2,O3).height/union(O1,O2,O3).width", "ratio", None,
     lambda m, a, b, c: _div(_union_terms(a, b, c).height, _union_terms(a, b, c).width)),
    ("mean(O.height/O.width)", "ratio", None,
     lambda m, a, b, c: (_div(a.height, a.width) + _div(b.height, b.width)
                         + _div(c.height, c.width)) / 3.0),
    ("max(O.area)/min(O.area)", "ratio", None,
     lambda m, a, b, c: _div(functools.reduce(np.maximum, (a.area, b.area, c.area)),
                             functools.reduce(np.minimum, (a.area, b.area, c.area)))),
]


@dataclass(frozen=True)
class Descriptor:
    index: int
    name: str
    unit: str          # px | px2 | ratio
    shift: str | None  # translation covariance class, see table comment


@dataclass(frozen=True)
class FeatureCatalog:
    arity: int
    descriptors: tuple[Descriptor, ...]
    _evaluators: tuple = field(compare=False, repr=False)
    _name_to_index: dict = field(compare=False, repr=False)

    @property
    def n_features(self):
        return len(self.descriptors)

    def index_of(self, name: str) -> int:
        try:
            return self._name_to_index[name]
        except KeyError:
            raise InvalidArityError(
                f"feature {name!r} not in the arity-{self.arity} catalog") from None

    def names(self):
        return [d.name for d in self.descriptors]


@functools.lru_cache(maxsize=None)
def catalog(arity: int) -> FeatureCatalog:
    """The fixed descriptor catalog for 1, 2 or 3 objects."""
    if arity not in (1, 2, 3):
        raise InvalidArityError(f"arity must be 1, 2 or 3, got {arity!r}")
    entries = []  # (name, unit, shift, evaluator(img, views))

    def bind_obj(fn, k):
        return lambda m, vs: fn(m, vs[k])

    def bind_pair(fn, k, l):
        return lambda m, vs: fn(m, vs[k], vs[l])

    for i in range(arity):
        for name, unit, shift, fn in _PER_OBJECT:
            entries.append((name.format(i=i + 1), unit, shift, bind_obj(fn, i)))
    for i in range(arity):
        for j in range(i + 1, arity):
            for (k, l) in ((i, j), (j, i)):
                for name, unit, shift, fn in _PAIR:
                    entries.append((name.format(i=k + 1, j=l + 1), unit, shift,
                                    bind_pair(fn, k, l)))
    if arity == 3:
        for name, unit, shift, fn in _TRIPLE:
            entries.append((name, unit, shift,
                            lambda m, vs, f=fn: f(m, vs[0], vs[1], vs[2])))

    assert len(entries) == ARITY_SIZES[arity]
    descriptors = tuple(Descriptor(k, name, unit, shift)
                        for k, (name, unit, shift, _) in enumerate(entries))
    return FeatureCatalog(
        arity=arity,
        descriptors=descriptors,
        _evaluators=tuple(fn for (_, _, _, fn) in entries),
        _name_to_index={d.name: d.index for d in descriptors},
    )


def arity_of(vector_or_length) -> int:
    """Recover the object count from a feature vector (or its length)."""
    n = vector_or_length if isinstance(vector_or_length, int) else len(vector_or_length)
    for arity, size in ARITY_SIZES.items():
        if n == size:
            return arity
    raise InvalidArityError(f"no catalog has {n} features")


def compute_position_features(image: ImageMeta, boxes: Sequence[Box]) -> np.ndarray:
    """Feature vector for one layout, in catalog order. Pure and deterministic."""
    per_object = [np.array([b.as_list()], dtype=np.float64) for b in boxes]
    return position_features_batch(float(image.width), float(image.height),
                                   per_object)[0]


def position_features_batch(widths, heights, object_boxes) -> np.ndarray:
    """Feature matrix for N layouts at once.

    widths/heights are scalars or (N,) arrays; object_boxes is a sequence of
    (N, 4) arrays in (left, top, right, bottom) order, one per object slot.
    Returns (N, n_features) float64, rows aligned with the inputs.
    """
    cat = catalog(len(object_boxes))
    widths = np.asarray(widths, dtype=np.float64)
    heights = np.asarray(heights, dtype=np.float64)
    img = _ImgTerms(widths, heights)
    views = []
    for arr in object_boxes:
        arr = np.asarray(arr, dtype=np.float64)
        views.append(_Terms(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]))
    n = views[0].left.shape[0]
    out = np.empty((n, cat.n_features), dtype=np.float64)
    for k, fn in enumerate(cat._evaluators):
        out[:, k] = np.broadcast_to(fn(img, views), (n,))
    return out

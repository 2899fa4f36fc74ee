"""Inverted-file index with product-quantized residuals (ADC scoring).

Vectors are routed to the inverted list of their nearest coarse centroid;
the residual against that centroid is product-quantized into pq_m bytes.
Queries score candidates without decompression through per-subspace lookup
tables, for both squared L2 distance and inner product, so nearest-neighbor
and linear-classifier (max inner product) queries run on one index.

All stored arrays are float32 (the on-disk format); score arithmetic runs
in float64. Builds are deterministic given (inputs, seed).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, FormatError, InsufficientDataError
from .geometry import Box, RegionRef

MAGIC = b"RBIRIVF1"
VERSION = 1
KMEANS_TOL = 1e-4


@dataclass(frozen=True)
class IndexParams:
    dim: int
    nlist: int = 256          # coarse codewords; 2**14 at paper scale
    pq_m: int = 16            # subquantizers; 16 x 8 bits = 128-bit codes
    nbits: int = 8            # fixed: byte-aligned codes
    nprobe: int = 64          # lists probed per query
    kmeans_iters: int = 25
    seed: int = 0
    train_cap: int = 100_000  # coarse-training sample cap

    def __post_init__(self):
        if self.dim < 1 or self.nlist < 1 or self.pq_m < 1:
            raise ValueError("dim, nlist and pq_m must be positive")
        if self.dim % self.pq_m != 0:
            raise DimensionMismatchError(
                f"dim {self.dim} not divisible by pq_m {self.pq_m}")
        if self.nbits != 8:
            raise ValueError("nbits is fixed at 8")
        if not 1 <= self.nprobe <= self.nlist:
            raise ValueError("nprobe must be in [1, nlist]")

    @property
    def dsub(self):
        return self.dim // self.pq_m

    @property
    def ksub(self):
        return 1 << self.nbits


def _pairwise_sqdist(x, c):
    # (n, d) x (k, d) -> (n, k); clamp tiny negatives from the expansion
    d2 = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * (x @ c.T)
    return np.maximum(d2, 0.0)


def train_kmeans(vectors, k, iters=25, seed=0, allow_duplicates=False,
                 return_trace=False):
    """Seeded k-means: kmeans++ init, Lloyd updates, farthest-point reseeding.

    Stops after `iters` rounds or when the relative inertia change drops
    below 1e-4. Empty clusters are re-centered on the point currently
    farthest from its assigned centroid. If k exceeds the number of distinct
    vectors, the distinct vectors all become centroids and the remainder are
    padded with copies (requires allow_duplicates; exact quantization).
    """
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n = X.shape[0]
    if n < 1:
        raise InsufficientDataError("k-means needs at least one vector")
    if k < 1:
        raise ValueError("k must be >= 1")

    _, first_idx = np.unique(X, axis=0, return_index=True)
    distinct_idx = np.sort(first_idx)
    if k > len(distinct_idx):
        if not allow_duplicates:
            raise InsufficientDataError(
                f"k={k} exceeds {len(distinct_idx)} distinct vectors")
        pads = [distinct_idx[i % len(distinct_idx)]
                for i in range(k - len(distinct_idx))]
        centroids = X[np.concatenate([distinct_idx, np.array(pads, dtype=int)])].copy()
        inertia = 0.0  # every distinct point is its own centroid
        return (centroids, [inertia]) if return_trace else centroids

    rng = np.random.default_rng(seed)
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[rng.integers(n)]
    d2 = _pairwise_sqdist(X, centroids[:1])[:, 0]
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = X[idx]
        d2 = np.minimum(d2, _pairwise_sqdist(X, centroids[j:j + 1])[:, 0])

    trace = []
    prev = None
    for _ in range(max(1, iters)):
        dists = _pairwise_sqdist(X, centroids)
        labels = dists.argmin(axis=1)
        point_d2 = dists[np.arange(n), labels]
        inertia = float(point_d2.sum())
        trace.append(inertia)
        if prev is not None and abs(prev - inertia) <= KMEANS_TOL * max(prev, 1e-12):
            break
        prev = inertia

        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        taken = point_d2.copy()
        for c in np.nonzero(~nonempty)[0]:
            far = int(taken.argmax())
            new_centroids[c] = X[far]
            taken[far] = -1.0
        centroids = new_centroids

    return (centroids, trace) if return_trace else centroids


class InvertedIndex:
    """Immutable once built; searches are read-only and freely concurrent."""

    def __init__(self, params, coarse, codebooks, list_ids, list_codes, regions):
        self.params = params
        self.coarse = coarse          # (nlist, dim) float32
        self.codebooks = codebooks    # (pq_m, 256, dsub) float32
        self.list_ids = list_ids      # per list: (len,) int64
        self.list_codes = list_codes  # per list: (len, pq_m) uint8
        self.regions = regions        # region_id -> RegionRef
        self._locator = {}
        for li, ids in enumerate(list_ids):
            for pos, rid in enumerate(ids):
                self._locator[int(rid)] = (li, pos)

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, features, regions, params: IndexParams) -> "InvertedIndex":
        feats = np.atleast_2d(np.asarray(features, dtype=np.float32))
        n = feats.shape[0]
        if n and feats.shape[1] != params.dim:
            raise DimensionMismatchError(
                f"features have dim {feats.shape[1]}, params.dim is {params.dim}")
        if regions is not None and len(regions) != n:
            raise DimensionMismatchError(
                f"{len(regions)} regions for {n} feature rows")

        if n == 0:
            coarse = np.zeros((params.nlist, params.dim), dtype=np.float32)
            codebooks = np.zeros((params.pq_m, params.ksub, params.dsub),
                                 dtype=np.float32)
            empty_ids = [np.empty(0, dtype=np.int64) for _ in range(params.nlist)]
            empty_codes = [np.empty((0, params.pq_m), dtype=np.uint8)
                           for _ in range(params.nlist)]
            return cls(params, coarse, codebooks, empty_ids, empty_codes, {})

        rng = np.random.default_rng(params.seed)
        if n > params.train_cap:
            sample = feats[np.sort(rng.choice(n, params.train_cap, replace=False))]
        else:
            sample = feats
        coarse = train_kmeans(sample, params.nlist, params.kmeans_iters,
                              params.seed, allow_duplicates=True).astype(np.float32)

        x64 = feats.astype(np.float64)
        c64 = coarse.astype(np.float64)
        labels = _pairwise_sqdist(x64, c64).argmin(axis=1)
        residuals = x64 - c64[labels]

        codebooks = np.empty((params.pq_m, params.ksub, params.dsub),
                             dtype=np.float32)
        codes = np.empty((n, params.pq_m), dtype=np.uint8)
        for m in range(params.pq_m):
            sub = residuals[:, m * params.dsub:(m + 1) * params.dsub]
            cb = train_kmeans(sub, params.ksub, params.kmeans_iters,
                              params.seed + 1 + m, allow_duplicates=True)
            codebooks[m] = cb.astype(np.float32)
            codes[:, m] = _pairwise_sqdist(sub, codebooks[m].astype(np.float64)) \
                .argmin(axis=1).astype(np.uint8)

        list_ids, list_codes = [], []
        ids = np.arange(n, dtype=np.int64)
        for li in range(params.nlist):
            members = ids[labels == li]
            list_ids.append(members)
            list_codes.append(codes[members])

        region_map = {}
        if regions is not None:
            # quantize boxes to float32 now so a save/load roundtrip (the
            # file stores f32) changes nothing
            for i in range(n):
                ref = regions[i]
                box = Box(*(float(np.float32(v)) for v in ref.box.as_list()))
                region_map[int(i)] = RegionRef(ref.image_id, ref.region_index, box)
        return cls(params, coarse, codebooks, list_ids, list_codes, region_map)

    # -- queries ------------------------------------------------------------

    @property
    def n_regions(self):
        return sum(len(ids) for ids in self.list_ids)

    def _check_query(self, query):
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.params.dim:
            raise DimensionMismatchError(
                f"query dim {q.shape[0]} != index dim {self.params.dim}")
        return q

    def _ip_lut(self, q):
        # (pq_m, 256): inner product of each codeword with its query subvector
        qsub = q.reshape(self.params.pq_m, 1, self.params.dsub)
        return (self.codebooks.astype(np.float64) * qsub).sum(axis=2)

    def search(self, query, metric="l2", nprobe=None, top_r=None):
        """Ranked (region_ids, raw_scores) from the nprobe best lists.

        l2 scores are approximate squared distances (ascending rank);
        inner_product scores rank descending. Ties break by region id.
        """
        q = self._check_query(query)
        nprobe = self.params.nprobe if nprobe is None else min(nprobe,
                                                               self.params.nlist)
        if self.n_regions == 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)

        c64 = self.coarse.astype(np.float64)
        if metric == "l2":
            coarse_scores = ((c64 - q) ** 2).sum(axis=1)
            order = np.argsort(coarse_scores, kind="stable")
        elif metric == "inner_product":
            coarse_scores = c64 @ q
            order = np.argsort(-coarse_scores, kind="stable")
        else:
            raise ValueError(f"unknown metric {metric!r}")
        probed = order[:nprobe]

        if metric == "inner_product":
            qlut = self._ip_lut(q)
        arange_m = np.arange(self.params.pq_m)

        all_ids, all_scores = [], []
        for li in probed:
            ids = self.list_ids[li]
            if len(ids) == 0:
                continue
            codes = self.list_codes[li]
            if metric == "l2":
                r = (q - c64[li]).reshape(self.params.pq_m, 1, self.params.dsub)
                lut = ((self.codebooks.astype(np.float64) - r) ** 2).sum(axis=2)
                scores = lut[arange_m[None, :], codes].sum(axis=1)
            else:
                scores = coarse_scores[li] + qlut[arange_m[None, :], codes].sum(axis=1)
            all_ids.append(ids)
            all_scores.append(scores)

        if not all_ids:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        ids = np.concatenate(all_ids)
        scores = np.concatenate(all_scores)
        rank = np.lexsort((ids, scores if metric == "l2" else -scores))
        if top_r is not None:
            rank = rank[:top_r]
        return ids[rank], scores[rank]

    def score_regions(self, query, region_ids, metric="inner_product"):
        """ADC scores for specific stored regions (e.g. attribute weights)."""
        q = self._check_query(query)
        if metric == "inner_product":
            qlut = self._ip_lut(q)
            coarse_ip = self.coarse.astype(np.float64) @ q
        c64 = self.coarse.astype(np.float64)
        arange_m = np.arange(self.params.pq_m)
        out = np.empty(len(region_ids), dtype=np.float64)
        for i, rid in enumerate(region_ids):
            li, pos = self._locator[int(rid)]
            code = self.list_codes[li][pos]
            if metric == "inner_product":
                out[i] = coarse_ip[li] + qlut[arange_m, code].sum()
            elif metric == "l2":
                r = (q - c64[li]).reshape(self.params.pq_m, 1, self.params.dsub)
                lut = ((self.codebooks.astype(np.float64) - r) ** 2).sum(axis=2)
                out[i] = lut[arange_m, code].sum()
            else:
                raise ValueError(f"unknown metric {metric!r}")
        return out

    def reconstruct(self, region_id) -> np.ndarray:
        """Approximate stored vector: coarse centroid + decoded residual."""
        li, pos = self._locator[int(region_id)]
        code = self.list_codes[li][pos]
        decoded = self.codebooks[np.arange(self.params.pq_m), code].reshape(-1)
        return (self.coarse[li].astype(np.float64) + decoded.astype(np.float64))

    def stats(self):
        image_ids = {ref.image_id for ref in self.regions.values()}
        return {
            "regions": int(self.n_regions),
            "images": len(image_ids),
            "dim": self.params.dim,
            "params": {"nlist": self.params.nlist, "pq_m": self.params.pq_m,
                       "nbits": self.params.nbits, "nprobe": self.params.nprobe},
        }

    # -- persistence --------------------------------------------------------

    def save(self, path):
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<IIIII", VERSION, self.params.dim,
                              self.params.nlist, self.params.pq_m,
                              self.params.nbits))
        buf.write(struct.pack("<Q", self.n_regions))
        buf.write(np.ascontiguousarray(self.coarse, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(self.codebooks, dtype="<f4").tobytes())
        entry_t = np.dtype([("id", "<u8"), ("code", "u1", (self.params.pq_m,))])
        for ids, codes in zip(self.list_ids, self.list_codes):
            buf.write(struct.pack("<Q", len(ids)))
            if len(ids):
                entries = np.empty(len(ids), dtype=entry_t)
                entries["id"] = ids.astype(np.uint64)
                entries["code"] = codes
                buf.write(entries.tobytes())
        for rid in sorted(self.regions):
            ref = self.regions[rid]
            encoded = ref.image_id.encode("utf-8")
            buf.write(struct.pack("<QI", rid, len(encoded)))
            buf.write(encoded)
            buf.write(struct.pack("<I", ref.region_index))
            buf.write(struct.pack("<4f", ref.box.left, ref.box.top,
                                  ref.box.right, ref.box.bottom))
        data = buf.getvalue()
        with open(path, "wb") as fh:
            fh.write(data)

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != MAGIC:
            raise FormatError(f"bad index magic in {path}")
        off = 8
        version, dim, nlist, pq_m, nbits = struct.unpack_from("<IIIII", data, off)
        off += 20
        if version != VERSION:
            raise FormatError(f"unsupported index version {version}")
        (region_count,) = struct.unpack_from("<Q", data, off)
        off += 8
        params = IndexParams(dim=dim, nlist=nlist, pq_m=pq_m, nbits=nbits,
                             nprobe=min(64, nlist))
        coarse = np.frombuffer(data, dtype="<f4", count=nlist * dim, offset=off) \
            .reshape(nlist, dim).copy()
        off += 4 * nlist * dim
        cb_count = pq_m * params.ksub * params.dsub
        codebooks = np.frombuffer(data, dtype="<f4", count=cb_count, offset=off) \
            .reshape(pq_m, params.ksub, params.dsub).copy()
        off += 4 * cb_count
        entry_t = np.dtype([("id", "<u8"), ("code", "u1", (pq_m,))])
        list_ids, list_codes = [], []
        for _ in range(nlist):
            (length,) = struct.unpack_from("<Q", data, off)
            off += 8
            entries = np.frombuffer(data, dtype=entry_t, count=length, offset=off)
            off += entry_t.itemsize * length
            list_ids.append(entries["id"].astype(np.int64))
            list_codes.append(entries["code"].reshape(length, pq_m).copy())
        regions = {}
        for _ in range(region_count):
            rid, id_len = struct.unpack_from("<QI", data, off)
            off += 12
            image_id = data[off:off + id_len].decode("utf-8")
            off += id_len
            (region_index,) = struct.unpack_from("<I", data, off)
            off += 4
            l, t, r, b = struct.unpack_from("<4f", data, off)
            off += 16
            regions[int(rid)] = RegionRef(image_id, region_index, Box(l, t, r, b))
        return cls(params, coarse, codebooks, list_ids, list_codes, regions)


def exact_search(features, query, metric="l2", top_r=None, ids=None):
    """Brute-force scan with the same scoring and tie rules as the index."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if X.size and X.shape[1] != q.shape[0]:
        raise DimensionMismatchError(
            f"query dim {q.shape[0]} != dataset dim {X.shape[1]}")
    ids = np.arange(X.shape[0], dtype=np.int64) if ids is None \
        else np.asarray(ids, dtype=np.int64)
    if metric == "l2":
        scores = ((X - q) ** 2).sum(axis=1)
        rank = np.lexsort((ids, scores))
    elif metric == "inner_product":
        scores = X @ q
        rank = np.lexsort((ids, -scores))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if top_r is not None:
        rank = rank[:top_r]
    return ids[rank], scores[rank]


def recall_at(approx_ids, exact_ids, r):
    """|top-r approx intersect top-r exact| / r."""
    return len(set(approx_ids[:r]) & set(exact_ids[:r])) / r

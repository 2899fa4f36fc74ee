"""HTTP JSON front door.

One immutable snapshot (index + dataset + model state) serves all reads;
mutating calls (ingest, build, train) run under a lock and swap the snapshot
atomically, so in-flight queries never observe a half-built state. Search
responses include the shortlist payload, which lets clients re-filter by
constraints without another round trip.

Errors are returned as {"code", "message", "detail"?} with codes from the
fixed vocabulary in errors.RbirError subclasses.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import constraint as con
from . import engine, evals, langrec, mining, store
from .classifier import ClassifierCache, train_svm
from .errors import RbirError
from .ivfadc import IndexParams, InvertedIndex

STATUS_BY_CODE = {
    "invalid_request": 400,
    "not_found": 404,
    "dimension_mismatch": 400,
    "oov": 400,
    "insufficient_data": 400,
    "io": 500,
    "internal": 500,
}


class ApiError(RbirError):
    def __init__(self, code, message, detail=None):
        super().__init__(message)
        self.code = code
        self.detail = detail


@dataclass
class ServiceConfig:
    state_dir: Path
    host: str = "127.0.0.1"
    port: int = 8023
    shortlist_r: int = 1000
    page_size: int = 50
    payload_cap: int = 500
    cors_origins: tuple = ()
    index_params: dict = field(default_factory=dict)


def _new_snapshot_id():
    return uuid.uuid4().hex[:12]


class Service:
    """Owns the snapshot lifecycle; handlers below are thin wrappers."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.state_dir = Path(config.state_dir)
        self.state = store.load_state(self.state_dir)
        if self.state.classifiers is None:
            self.state.classifiers = ClassifierCache(self.state_dir / "classifiers")
        self.snapshot_id = _new_snapshot_id()
        self.write_lock = threading.Lock()

    # -- helpers -------------------------------------------------------------

    def require_index(self):
        if self.state.index is None:
            raise ApiError("not_found", "no index built yet")
        return self.state.index

    def require_dataset(self):
        if self.state.dataset is None:
            raise ApiError("not_found", "no dataset ingested yet")
        return self.state.dataset

    def image_dims(self):
        dataset = self.require_dataset()
        return {m.image_id: (m.width, m.height) for m in dataset.images}

    def check_pin(self, body):
        pin = body.get("snapshot_id")
        if pin is not None and pin != self.snapshot_id:
            raise ApiError("invalid_request",
                           f"snapshot {pin} is gone; current is {self.snapshot_id}")

    # -- mutations -----------------------------------------------------------

    def ingest(self, manifest_path):
        with self.write_lock:
            dataset = store.load_dataset(manifest_path)
            self.state.dataset = dataset
            store.save_state(self.state_dir, self.state)
            self.snapshot_id = _new_snapshot_id()
            return {
                "dataset_id": f"{dataset.manifest.name}-"
                              f"{dataset.manifest.features_digest[:8]}",
                "counts": {"images": len(dataset.images),
                           "regions": len(dataset.regions)},
            }

    def build_index(self, params_body):
        with self.write_lock:
            dataset = self.require_dataset()
            defaults = dict(self.config.index_params)
            defaults.update(params_body or {})
            params = IndexParams(
                dim=dataset.manifest.dim,
                nlist=int(defaults.get("nlist", 256)),
                pq_m=int(defaults.get("pq_m", 16)),
                nprobe=int(defaults.get("nprobe", 64)),
                kmeans_iters=int(defaults.get("kmeans_iters", 25)),
                seed=int(defaults.get("seed", 0)),
            )
            index = InvertedIndex.build(dataset.features, dataset.regions, params)
            self.state.index = index
            store.save_state(self.state_dir, self.state)
            self.snapshot_id = _new_snapshot_id()
            return {"snapshot_id": self.snapshot_id, "stats": index.stats()}

    def train_classifier(self, body):
        with self.write_lock:
            name = str(body.get("name", "")).strip()
            if not name:
                raise ApiError("invalid_request", "classifier name is required")
            kind = body.get("kind", "category")
            positives = self._resolve_vectors(body, "positive")
            negatives = self._resolve_vectors(body, "negative", required=False)
            if negatives is None or not len(negatives):
                negatives = self._default_negatives(body, positives)
            clf = train_svm(positives, negatives, name=name, kind=kind,
                            lam=float(body.get("lambda", 1e-2)),
                            epochs=int(body.get("epochs", 60)),
                            seed=int(body.get("seed", 0)))
            self.state.classifiers.put(clf)
            return {"name": name, "dim": clf.dim}

    def _resolve_vectors(self, body, prefix, required=True):
        vectors = body.get(f"{prefix}_vectors")
        region_ids = body.get(f"{prefix}_region_ids")
        if vectors is not None:
            return np.asarray(vectors, dtype=np.float32)
        if region_ids is not None:
            dataset = self.require_dataset()
            rows = [int(r) for r in region_ids]
            bad = [r for r in rows if not 0 <= r < dataset.features.shape[0]]
            if bad:
                raise ApiError("not_found", f"region ids not in dataset: {bad[:5]}")
            return dataset.features[rows]
        if required:
            raise ApiError("invalid_request",
                           f"{prefix}_vectors or {prefix}_region_ids is required")
        return None

    def _default_negatives(self, body, positives):
        # seeded sample of other regions when the caller provides none
        dataset = self.require_dataset()
        pos_rows = set(int(r) for r in body.get("positive_region_ids", []))
        pool = [i for i in range(dataset.features.shape[0]) if i not in pos_rows]
        if not pool:
            raise ApiError("insufficient_data", "no negative candidates available")
        rng = np.random.default_rng(int(body.get("seed", 0)))
        take = min(len(pool), max(len(positives) * 3, 16))
        picks = rng.choice(len(pool), size=take, replace=False)
        return dataset.features[[pool[i] for i in picks]]

    # -- queries -------------------------------------------------------------

    def parse_object(self, obj):
        if not isinstance(obj, dict):
            raise ApiError("invalid_request", "object query must be an object")
        attributes = tuple(str(a) for a in obj.get("attributes", []))
        if "by_example" in obj:
            be = obj["by_example"]
            if isinstance(be, dict) and "vector" in be:
                target = engine.ByExample(
                    vector=np.asarray(be["vector"], dtype=np.float64))
            elif isinstance(be, dict) and "region_id" in be:
                target = engine.ByExample(region_id=int(be["region_id"]))
            else:
                raise ApiError("invalid_request",
                               "by_example needs vector or region_id")
        elif "by_category" in obj:
            target = engine.ByCategory(str(obj["by_category"]))
        else:
            raise ApiError("invalid_request",
                           "object query needs by_example or by_category")
        return engine.ObjectQuery(target, attributes)

    def parse_query(self, body):
        objects = [self.parse_object(o) for o in body.get("objects", [])]
        if not objects:
            raise ApiError("invalid_request", "at least one object is required")
        constraints = body.get("constraints")
        cs = None
        if constraints:
            cs = con.ConstraintSet.from_json(constraints)
        try:
            return engine.Query(
                objects,
                constraint_set=cs,
                top_k=int(body.get("top_k", self.config.page_size)),
                shortlist_r=int(body.get("shortlist_r", self.config.shortlist_r)),
                t=int(body.get("t", 1)),
                nprobe=(int(body["nprobe"]) if "nprobe" in body else None),
                include_failing=bool(body.get("include_failing", False)),
            )
        except ValueError as exc:
            raise ApiError("invalid_request", str(exc)) from exc

    def search(self, body):
        self.check_pin(body)
        query = self.parse_query(body)
        offset = int(body.get("offset", 0))  # pagination by rank offset
        if offset:
            query.top_k = offset + query.top_k
        results, payload = engine.run_query(query, self.require_index(),
                                            self.state.classifiers,
                                            self.image_dims(),
                                            payload_cap=self.config.payload_cap)
        return {
            "snapshot_id": self.snapshot_id,
            "offset": offset,
            "results": [r.to_json() for r in results[offset:]],
            "shortlist": payload_to_json(payload),
        }

    def recommend_mining(self, body):
        query = self.parse_query(body)
        query.constraint_set = None
        top_n = int(body.get("top_n", self.config.payload_cap))
        _, payload = engine.run_query(query, self.require_index(),
                                      self.state.classifiers, self.image_dims(),
                                      payload_cap=top_n)
        results = []
        for image in payload["images"]:
            if not image["combos"]:
                continue
            top = image["combos"][0]
            ref = {"image_id": image["image_id"],
                   "boxes": [self.state.index.regions[rid].box.as_list()
                             for rid in top["regions"]]}
            results.append((ref, top["features"]))
        if len(results) < 2:
            raise ApiError("insufficient_data",
                           "not enough search results to mine")
        params = mining.MiningParams(
            clusters=int(body.get("K", 10)),
            min_cluster=int(body.get("min_cluster", 5)),
            cascade=con.CascadeParams(int(body.get("n_c", 3)),
                                      float(body.get("r_l", 0.96))),
            seed=int(body.get("seed", 0)),
        )
        recommendations = mining.mine_recommendations(results, params)
        return [rec.to_json() for rec in recommendations]

    def recommend_language(self, body):
        for component, label in ((self.state.embeddings, "embedding table"),
                                 (self.state.rel_classifier,
                                  "relationship classifier"),
                                 (self.state.rel_store, "constraint store")):
            if component is None:
                raise ApiError("not_found", f"no {label} in the service state")
        cat1 = str(body.get("category1", "")).strip()
        cat2 = str(body.get("category2", "")).strip()
        if not cat1 or not cat2:
            raise ApiError("invalid_request", "category1 and category2 required")
        recs, skipped = langrec.recommend_language(
            cat1, cat2, self.state.embeddings, self.state.rel_classifier,
            self.state.rel_store, top_m=int(body.get("top_m", 5)),
            min_likelihood=float(body.get("min_likelihood", 0.0)))
        return {
            "recommendations": [
                {"predicate": p, "likelihood": lk, "constraints": cs.to_json()}
                for p, lk, cs in recs
            ],
            "skipped": skipped,
        }

    def canvas_constraints(self, body):
        boxes = []
        for entry in body.get("boxes", []):
            try:
                boxes.append(engine.CanvasBox(
                    int(entry["object_index"]), float(entry["left"]),
                    float(entry["top"]), float(entry["right"]),
                    float(entry["bottom"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ApiError("invalid_request", f"bad canvas box: {exc}") from exc
        try:
            return engine.canvas_to_constraints(boxes).to_json()
        except ValueError as exc:
            raise ApiError("invalid_request", str(exc)) from exc

    # -- evals ---------------------------------------------------------------

    def eval_cluster_reproduction(self, body):
        return evals.eval_cluster_reproduction(
            seed=int(body.get("seed", 0)),
            n_c_values=tuple(int(v) for v in body.get("n_c_values", (1, 2, 3, 4, 5))),
            n_clusters=int(body.get("clusters", 3)),
            per_cluster=int(body.get("per_cluster", 40)))

    def eval_relationship_detection(self, body):
        if self.state.rel_store is None:
            raise ApiError("not_found", "no relationship constraint store")
        path = body.get("triples_path")
        if not path:
            raise ApiError("invalid_request", "triples_path is required")
        triples = langrec.TripleDataset.load(path)
        return evals.eval_relationship_detection(
            self.state.rel_store, triples, min_test=int(body.get("min_test", 10)))

    def eval_ann_recall(self, body):
        index = self.require_index()
        dataset = self.require_dataset()
        return evals.eval_ann_recall(
            index, dataset.features,
            ks_values=tuple(int(v) for v in body.get("ks", (1, 8, 64))),
            n_queries=int(body.get("queries", 100)),
            r=int(body.get("r", 10)), seed=int(body.get("seed", 0)))


def payload_to_json(payload) -> dict:
    images = []
    for image in payload["images"]:
        meta = image["meta"]
        images.append({
            "image_id": image["image_id"],
            "score": image["score"],
            "norms": [float(v) for v in image["norms"]],
            "width": meta.width,
            "height": meta.height,
            "objects": image["objects"],
            "combos": [
                {"regions": combo["regions"], "score": combo["score"],
                 "features": [float(v) for v in combo["features"]]}
                for combo in image["combos"]
            ],
        })
    return {"arity": payload["arity"], "t": payload["t"], "images": images}


def create_app(config: ServiceConfig) -> FastAPI:
    service = Service(config)
    app = FastAPI(title="rbir", version="0.1.0")
    app.state.service = service
    if config.cors_origins:
        app.add_middleware(CORSMiddleware,
                           allow_origins=list(config.cors_origins),
                           allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(RbirError)
    async def handle_rbir_error(_req: Request, exc: RbirError):
        body = {"code": exc.code, "message": str(exc)}
        detail = getattr(exc, "detail", None)
        if detail is not None:
            body["detail"] = detail
        return JSONResponse(status_code=STATUS_BY_CODE.get(exc.code, 500),
                            content=body)

    async def read_body(request: Request) -> dict:
        try:
            raw = await request.body()
            body = json.loads(raw) if raw else {}
        except json.JSONDecodeError as exc:
            raise ApiError("invalid_request", f"bad JSON body: {exc}") from exc
        if not isinstance(body, dict):
            raise ApiError("invalid_request", "body must be a JSON object")
        return body

    @app.post("/datasets/ingest")
    async def ingest(request: Request):
        body = await read_body(request)
        manifest_path = body.get("manifest_path")
        if not manifest_path:
            raise ApiError("invalid_request", "manifest_path is required")
        return service.ingest(manifest_path)

    @app.post("/index/build")
    async def build_index(request: Request):
        body = await read_body(request)
        return service.build_index(body.get("params"))

    @app.get("/index/stats")
    async def index_stats():
        if service.state.index is None:
            dim = (service.state.dataset.manifest.dim
                   if service.state.dataset else 0)
            return {"snapshot_id": service.snapshot_id, "regions": 0,
                    "images": 0, "dim": dim, "params": None}
        stats = service.state.index.stats()
        stats["snapshot_id"] = service.snapshot_id
        return stats

    @app.get("/catalog")
    async def catalog(arity: int = 1):
        from . import geometry
        cat = geometry.catalog(arity)
        return [{"index": d.index, "name": d.name, "unit": d.unit}
                for d in cat.descriptors]

    @app.post("/classifiers/train")
    async def train_classifier(request: Request):
        return service.train_classifier(await read_body(request))

    @app.get("/classifiers")
    async def list_classifiers():
        return service.state.classifiers.names()

    @app.post("/search")
    async def search(request: Request):
        return service.search(await read_body(request))

    @app.post("/recommend/mining")
    async def recommend_mining(request: Request):
        return service.recommend_mining(await read_body(request))

    @app.post("/recommend/language")
    async def recommend_language(request: Request):
        return service.recommend_language(await read_body(request))

    @app.post("/canvas/constraints")
    async def canvas_constraints(request: Request):
        return service.canvas_constraints(await read_body(request))

    @app.post("/eval/cluster-reproduction")
    async def eval_clusters(request: Request):
        return service.eval_cluster_reproduction(await read_body(request))

    @app.post("/eval/relationship-detection")
    async def eval_relationships(request: Request):
        return service.eval_relationship_detection(await read_body(request))

    @app.post("/eval/ann-recall")
    async def eval_ann(request: Request):
        return service.eval_ann_recall(await read_body(request))

    return app


def serve(config: ServiceConfig):
    import uvicorn
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")

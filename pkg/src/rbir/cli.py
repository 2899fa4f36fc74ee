"""Command line front door.

Exit codes: 0 success, 1 usage error, 2 runtime error. Subcommands that
mutate state operate on a state directory shared with the HTTP service, and
`search`/`recommend` accept the same JSON bodies as the service endpoints.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import constraint as con
from . import evals, geometry, langrec, store
from .errors import RbirError
from .ivfadc import IndexParams, InvertedIndex
from .service import Service, ServiceConfig


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> Parser:
    parser = Parser(prog="rbir", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("catalog", help="dump the position-feature catalog")
    p.add_argument("--arity", type=int, required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--categories", default="person,horse,dog")
    p.add_argument("--predicates", default="left_of,above,on_top_of,inside")
    p.add_argument("--distractors", type=int, default=2)

    p = sub.add_parser("ingest", help="load a dataset into the state directory")
    p.add_argument("--state", required=True)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("build-index", help="build the region index")
    p.add_argument("--state", required=True)
    p.add_argument("--nlist", type=int, default=256)
    p.add_argument("--pq-m", type=int, default=16)
    p.add_argument("--nprobe", type=int, default=64)
    p.add_argument("--kmeans-iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-classifier", help="train and cache a classifier")
    p.add_argument("--state", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--kind", choices=("category", "attribute"), default="category")
    p.add_argument("--labels", help="labels.jsonl; positives = rows labeled --name")
    p.add_argument("--positive-ids", help="comma-separated region ids")
    p.add_argument("--negative-ids")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-relationships",
                       help="train the relationship likelihood classifier")
    p.add_argument("--state", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("learn-rel-constraints",
                       help="learn one constraint set per predicate")
    p.add_argument("--state", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--nc", type=int, default=3)
    p.add_argument("--rl", type=float, default=0.96)
    p.add_argument("--min-samples", type=int, default=10)

    p = sub.add_parser("search", help="run a query from a JSON file")
    p.add_argument("--state", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out")

    p = sub.add_parser("recommend", help="spatial relationship recommendations")
    rec = p.add_subparsers(dest="mode", parser_class=Parser)
    m = rec.add_parser("mining")
    m.add_argument("--state", required=True)
    m.add_argument("--query", required=True)
    m.add_argument("--K", type=int, default=10)
    m.add_argument("--nc", type=int, default=3)
    m.add_argument("--seed", type=int, default=0)
    g = rec.add_parser("language")
    g.add_argument("--state", required=True)
    g.add_argument("--cat1", required=True)
    g.add_argument("--cat2", required=True)
    g.add_argument("--top-m", type=int, default=5)

    p = sub.add_parser("eval", help="evaluation protocols")
    ev = p.add_subparsers(dest="protocol", parser_class=Parser)
    c = ev.add_parser("cluster-reproduction")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--nc-values", default="1,2,3,4,5")
    c.add_argument("--clusters", type=int, default=3)
    c.add_argument("--per-cluster", type=int, default=40)
    r = ev.add_parser("relationship-detection")
    r.add_argument("--state", required=True)
    r.add_argument("--triples", required=True)
    r.add_argument("--min-test", type=int, default=10)
    a = ev.add_parser("ann-recall")
    a.add_argument("--state")
    a.add_argument("--dataset", help="'synth' for a built-in synthetic corpus")
    a.add_argument("--ks", default="1,8,64")
    a.add_argument("--queries", type=int, default=100)
    a.add_argument("--r", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--state", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8023)
    p.add_argument("--cors", action="append", default=[])
    p.add_argument("--shortlist-r", type=int, default=1000)

    return parser


def _emit(obj, out_path=None):
    text = json.dumps(obj, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n")
    else:
        print(text)


def _service(state_dir) -> Service:
    return Service(ServiceConfig(state_dir=Path(state_dir)))


def _load_query_file(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"query file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"query file {path} is not valid JSON: {exc}")


def cmd_catalog(args):
    if args.arity not in (1, 2, 3):
        raise UsageError(f"--arity must be 1, 2 or 3, got {args.arity}")
    cat = geometry.catalog(args.arity)
    for d in cat.descriptors:
        print(json.dumps({"index": d.index, "name": d.name, "unit": d.unit}))


def cmd_synth(args):
    spec = store.SyntheticSpec(
        seed=args.seed, dim=args.dim,
        categories=store.default_categories(
            [c.strip() for c in args.categories.split(",") if c.strip()],
            args.dim, args.seed),
        predicates=[p.strip() for p in args.predicates.split(",") if p.strip()],
        images=args.images, distractors=args.distractors,
    )
    result = store.generate_synthetic(spec, args.out)
    _emit({"manifest": str(result.manifest_path),
           "labels": str(result.labels_path),
           "triples": str(result.triples_path),
           "embeddings": str(result.embeddings_path),
           "images": result.manifest.images,
           "regions": result.manifest.regions})


def cmd_ingest(args):
    _emit(_service(args.state).ingest(args.manifest))


def cmd_build_index(args):
    _emit(_service(args.state).build_index({
        "nlist": args.nlist, "pq_m": args.pq_m, "nprobe": args.nprobe,
        "kmeans_iters": args.kmeans_iters, "seed": args.seed}))


def cmd_train_classifier(args):
    service = _service(args.state)
    body = {"name": args.name, "kind": args.kind, "lambda": args.lam,
            "epochs": args.epochs, "seed": args.seed}
    if args.labels:
        dataset = service.require_dataset()
        categories, _ = store.load_labels(args.labels)
        row_of = {(ref.image_id, ref.region_index): i
                  for i, ref in enumerate(dataset.regions)}
        positives = [row_of[(img, idx)] for img, idx, cat in categories
                     if cat == args.name and (img, idx) in row_of]
        negatives = [row_of[(img, idx)] for img, idx, cat in categories
                     if cat != args.name and (img, idx) in row_of]
        if not positives:
            raise UsageError(f"no regions labeled {args.name!r} in {args.labels}")
        rng = np.random.default_rng(args.seed)
        take = min(len(negatives), max(3 * len(positives), 16))
        picks = sorted(rng.choice(len(negatives), size=take, replace=False).tolist())
        body["positive_region_ids"] = positives
        body["negative_region_ids"] = [negatives[i] for i in picks]
    elif args.positive_ids:
        body["positive_region_ids"] = [int(v) for v in args.positive_ids.split(",")]
        if args.negative_ids:
            body["negative_region_ids"] = [int(v)
                                           for v in args.negative_ids.split(",")]
    else:
        raise UsageError("provide --labels or --positive-ids")
    _emit(service.train_classifier(body))


def cmd_train_relationships(args):
    service = _service(args.state)
    table = langrec.EmbeddingTable.load(args.embeddings)
    triples = langrec.TripleDataset.load(args.triples)
    clf = langrec.train_relationship_classifier(triples, table,
                                                epochs=args.epochs, lr=args.lr,
                                                seed=args.seed)
    service.state.embeddings = table
    service.state.rel_classifier = clf
    store.save_state(service.state_dir, service.state)
    _emit({"vocabulary": list(clf.vocabulary), "oov_skipped": clf.oov_skipped})


def cmd_learn_rel_constraints(args):
    service = _service(args.state)
    triples = langrec.TripleDataset.load(args.triples)
    rel_store = langrec.RelationshipConstraintStore(
        service.state_dir / "relationships")
    params = con.CascadeParams(args.nc, args.rl)
    learned, skipped = [], []
    for predicate in triples.vocabulary():
        try:
            rel_store.put(predicate, langrec.learn_relationship_constraints(
                triples, predicate, params, min_samples=args.min_samples))
            learned.append(predicate)
        except RbirError:
            skipped.append(predicate)
    service.state.rel_store = rel_store
    store.save_state(service.state_dir, service.state)
    _emit({"learned": learned, "skipped": skipped})


def cmd_search(args):
    body = _load_query_file(args.query)
    _emit(_service(args.state).search(body), args.out)


def cmd_recommend(args):
    if args.mode == "mining":
        body = _load_query_file(args.query)
        body.update({"K": args.K, "n_c": args.nc, "seed": args.seed})
        _emit(_service(args.state).recommend_mining(body))
    elif args.mode == "language":
        _emit(_service(args.state).recommend_language(
            {"category1": args.cat1, "category2": args.cat2,
             "top_m": args.top_m}))
    else:
        raise UsageError("recommend needs a mode: mining or language")


def _synth_ann_corpus(seed):
    feats, _ = evals.synthetic_ann_corpus(seed=seed)
    params = IndexParams(dim=64, nlist=256, pq_m=8, nprobe=64, seed=seed)
    return InvertedIndex.build(feats, None, params), feats


def cmd_eval(args):
    if args.protocol == "cluster-reproduction":
        _emit(evals.eval_cluster_reproduction(
            seed=args.seed,
            n_c_values=tuple(int(v) for v in args.nc_values.split(",")),
            n_clusters=args.clusters, per_cluster=args.per_cluster))
    elif args.protocol == "relationship-detection":
        service = _service(args.state)
        _emit(service.eval_relationship_detection(
            {"triples_path": args.triples, "min_test": args.min_test}))
    elif args.protocol == "ann-recall":
        ks = tuple(int(v) for v in args.ks.split(","))
        if args.dataset == "synth":
            index, feats = _synth_ann_corpus(args.seed)
            _emit(evals.eval_ann_recall(index, feats, ks_values=ks,
                                        n_queries=args.queries, r=args.r,
                                        seed=args.seed))
        elif args.state:
            service = _service(args.state)
            _emit(service.eval_ann_recall(
                {"ks": list(ks), "queries": args.queries, "r": args.r,
                 "seed": args.seed}))
        else:
            raise UsageError("ann-recall needs --state or --dataset synth")
    else:
        raise UsageError("eval needs a protocol")


def cmd_serve(args):
    from .service import serve
    serve(ServiceConfig(state_dir=Path(args.state), host=args.host,
                        port=args.port, cors_origins=tuple(args.cors),
                        shortlist_r=args.shortlist_r))


COMMANDS = {
    "catalog": cmd_catalog,
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "build-index": cmd_build_index,
    "train-classifier": cmd_train_classifier,
    "train-relationships": cmd_train_relationships,
    "learn-rel-constraints": cmd_learn_rel_constraints,
    "search": cmd_search,
    "recommend": cmd_recommend,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        COMMANDS[args.command](args)
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RbirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

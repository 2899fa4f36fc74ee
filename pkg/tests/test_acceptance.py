"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line and enforcing its runtime budget. Run with `pytest -s
tests/test_acceptance.py` to see the per-criterion lines."""

import math
import time

import numpy as np
import pytest

from rbir import constraint as con
from rbir import engine, evals, geometry, langrec, mining, store
from rbir.classifier import ClassifierCache, train_svm
from rbir.engine import ByCategory, ByExample, CanvasBox, ObjectQuery, Query
from rbir.geometry import Box, ImageMeta
from rbir.ivfadc import IndexParams, InvertedIndex, exact_search, recall_at, train_kmeans

from test_engine import oracle_pipeline
from test_langrec import geometric_triples


class Criterion:
    def __init__(self, name, budget_s):
        self.name = name
        self.budget_s = budget_s
        self.t0 = time.time()

    def done(self):
        elapsed = time.time() - self.t0
        status = "PASS" if elapsed < self.budget_s else "FAIL (over budget)"
        print(f"\nACCEPTANCE {status}: {self.name} "
              f"[{elapsed:.1f}s / {self.budget_s}s]")
        assert elapsed < self.budget_s, \
            f"{self.name} took {elapsed:.1f}s, budget {self.budget_s}s"


def test_catalog_counts():
    c = Criterion("catalog counts 19/82/213", 1.0)
    assert geometry.catalog(1).n_features == 19
    assert geometry.catalog(2).n_features == 82
    assert geometry.catalog(3).n_features == 213
    c.done()


def oracle_min_fp(pos, neg, recall_floor):
    """Exhaustive stump search over every (feature, sign, data threshold),
    vectorized per feature but independent of the learner's shortcut."""
    m = max(1, math.ceil(recall_floor * pos.shape[0]))
    best = None
    for f in range(pos.shape[1]):
        thr = np.unique(np.concatenate([pos[:, f], neg[:, f]]))
        kept = (pos[:, f][None, :] >= thr[:, None]).sum(axis=1)
        fp = (neg[:, f][None, :] >= thr[:, None]).sum(axis=1)
        feasible = kept >= m
        if feasible.any():
            cand = int(fp[feasible].min())
            best = cand if best is None else min(best, cand)
        kept = (pos[:, f][None, :] <= thr[:, None]).sum(axis=1)
        fp = (neg[:, f][None, :] <= thr[:, None]).sum(axis=1)
        feasible = kept >= m
        if feasible.any():
            cand = int(fp[feasible].min())
            best = cand if best is None else min(best, cand)
    return best


def test_cascade_recall_bound_and_stage_optimality():
    c = Criterion("cascade recall bound + per-stage optimality (50 sets)", 30.0)
    rng = np.random.default_rng(1234)
    params = con.CascadeParams(3, 0.96)
    for trial in range(50):
        n_pos = int(rng.integers(20, 101))
        n_neg = int(rng.integers(20, 101))
        shift = rng.uniform(0.1, 0.8)
        pos = rng.normal(shift, 1.0, size=(n_pos, 19))
        neg = rng.normal(-shift, 1.0, size=(n_neg, 19))
        data = con.LabeledFeatureSet(pos, neg)
        cascade = con.learn_cascade(data, params)
        metrics = con.evaluate_metrics(cascade, data)
        stages = len(cascade.constraints)
        assert metrics.recall >= 0.96 ** stages - 1e-12, trial

        # replay the greedy loop and check every stage against the oracle
        cur_pos, cur_neg = pos, neg
        for stage_constraint in cascade.constraints:
            survivors = con.LabeledFeatureSet(cur_pos, cur_neg)
            learned, fp, kept = con.learn_stage(survivors, 0.96)
            assert learned == stage_constraint
            assert fp == oracle_min_fp(cur_pos, cur_neg, 0.96), trial
            assert kept >= math.ceil(0.96 * cur_pos.shape[0])
            only = con.ConstraintSet(1, (stage_constraint,))
            cur_pos = cur_pos[con.passes_matrix(only, cur_pos)]
            cur_neg = cur_neg[con.passes_matrix(only, cur_neg)]
    c.done()


def test_cluster_reproduction_trend():
    c = Criterion("Table-1 style trend on synthetic layout clusters", 60.0)
    report = evals.eval_cluster_reproduction(seed=0, n_c_values=(1, 2, 3, 4, 5),
                                             n_clusters=3, per_cluster=40)
    recalls = [report["per_n_c"][n]["mean_recall"] for n in (1, 2, 3, 4, 5)]
    fps = [report["per_n_c"][n]["mean_fp_count"] for n in (1, 2, 3, 4, 5)]
    assert all(a >= b - 1e-12 for a, b in zip(recalls, recalls[1:])), recalls
    assert all(a >= b - 1e-12 for a, b in zip(fps, fps[1:])), fps
    assert report["per_n_c"][3]["mean_f_value"] >= 0.85
    c.done()


def test_ann_quality():
    c = Criterion("ANN recall vs exact scan (10k x 64d, M=8, k'=256)", 300.0)
    X, rng = evals.synthetic_ann_corpus(seed=2024)
    assert X.shape == (10_000, 64)
    index = InvertedIndex.build(
        X, None, IndexParams(dim=64, nlist=256, pq_m=8, nprobe=64, seed=7))
    picks = rng.choice(len(X), 300, replace=False)
    queries = X[picks] + 0.01 * rng.normal(size=(300, 64)).astype(np.float32)

    exact1 = [exact_search(X, q, "l2", top_r=1)[0][0] for q in queries]
    exact10 = [exact_search(X, q, "l2", top_r=10)[0].tolist() for q in queries]
    recall1_all = np.mean([
        index.search(q, "l2", nprobe=256, top_r=1)[0][0] == e
        for q, e in zip(queries, exact1)])
    assert recall1_all >= 0.9, recall1_all

    recall10 = {}
    for ks in (1, 8, 64, 256):
        recall10[ks] = float(np.mean([
            recall_at(index.search(q, "l2", nprobe=ks, top_r=10)[0].tolist(),
                      e, 10)
            for q, e in zip(queries, exact10)]))
    assert recall10[64] >= 0.8, recall10
    values = [recall10[ks] for ks in (1, 8, 64, 256)]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:])), recall10
    print(f"\n  recall@1 probe-all={recall1_all:.3f}; recall@10 per ks: "
          + ", ".join(f"{ks}: {v:.3f}" for ks, v in recall10.items()))
    c.done()


def test_adc_consistency():
    c = Criterion("ADC lookup scores match reconstruction scores", 10.0)
    rng = np.random.default_rng(31)
    centers = rng.normal(size=(20, 32))
    X = (centers[rng.integers(0, 20, 2000)]
         + 0.1 * rng.normal(size=(2000, 32))).astype(np.float32)
    index = InvertedIndex.build(
        X, None, IndexParams(dim=32, nlist=32, pq_m=8, nprobe=32, seed=5))
    for _ in range(1000):
        rid = int(rng.integers(0, 2000))
        q = rng.normal(size=32)
        recon = index.reconstruct(rid)
        lut_l2 = index.score_regions(q, [rid], "l2")[0]
        direct_l2 = float(((q - recon) ** 2).sum())
        assert abs(lut_l2 - direct_l2) <= 1e-4 * max(abs(direct_l2), 1e-9)
        lut_ip = index.score_regions(q, [rid], "inner_product")[0]
        direct_ip = float(q @ recon)
        assert abs(lut_ip - direct_ip) <= \
            1e-4 * max(abs(direct_ip), abs(lut_ip), 1e-9)
    c.done()


@pytest.fixture(scope="module")
def degenerate_scene(tmp_path_factory):
    """50-image synthetic dataset indexed with zero quantization error:
    nlist >= n_regions makes every residual exactly zero."""
    tmp = tmp_path_factory.mktemp("accept_scene")
    spec = store.SyntheticSpec(
        seed=77, dim=32,
        categories=store.default_categories(["person", "horse", "dog"], 32, 9,
                                            sigma=0.25),
        predicates=["left_of", "above", "on_top_of", "inside"],
        images=50, distractors=2,
    )
    result = store.generate_synthetic(spec, tmp / "data")
    dataset = store.load_dataset(result.manifest_path)
    index = InvertedIndex.build(
        dataset.features, dataset.regions,
        IndexParams(dim=32, nlist=256, pq_m=8, nprobe=256, seed=1))
    dims = {m.image_id: (m.width, m.height) for m in dataset.images}

    cache = ClassifierCache(tmp / "cache")
    labels = {}
    for image_id, region_index, category in result.category_labels:
        labels.setdefault(category, []).append((image_id, region_index))
    row_of = {(r.image_id, r.region_index): i
              for i, r in enumerate(dataset.regions)}
    rng = np.random.default_rng(13)
    for name in ("person", "horse"):
        pos = [row_of[k] for k in labels[name]]
        neg_pool = [row_of[k] for cat, keys in labels.items() if cat != name
                    for k in keys]
        neg = rng.choice(neg_pool, size=100, replace=False)
        cache.put(train_svm(dataset.features[pos], dataset.features[list(neg)],
                            name=name, kind="category", epochs=40, seed=21))
    return dataset, index, dims, cache, result


def test_pipeline_exactness_at_degenerate_settings(degenerate_scene):
    c = Criterion("pipeline equals brute-force oracle (20 seeded queries)", 60.0)
    dataset, index, dims, cache, _ = degenerate_scene
    rng = np.random.default_rng(99)
    cat2 = geometry.catalog(2)
    cx_constraint = con.ConstraintSet(2, (
        con.PositionConstraint(cat2.index_of("O1.cx-O2.cx"), 0.0, -1),), "manual")

    for trial in range(20):
        if trial % 2 == 0:
            vec = rng.normal(size=32)
            query = Query([ObjectQuery(ByExample(vector=vec))], top_k=10,
                          shortlist_r=10 ** 6, nprobe=256)
            plans = [("l2", vec, [])]
            cs = None
        else:
            cs = cx_constraint if trial % 4 == 1 else None
            query = Query([ObjectQuery(ByCategory("person")),
                           ObjectQuery(ByCategory("horse"))],
                          constraint_set=cs, top_k=10, shortlist_r=10 ** 6,
                          nprobe=256, t=2)
            plans = [("inner_product",
                      cache.get(name).weights.astype(np.float64), [])
                     for name in ("person", "horse")]
        results, _ = engine.run_query(query, index, cache, dims)
        expected = oracle_pipeline(dataset.features, dataset.regions, dims,
                                   plans, t=query.t, constraint_set=cs)[:10]
        assert [r.image_id for r in results] == [img for img, _ in expected], trial
        for result, (_, rid_tuple) in zip(results, expected):
            assert tuple(e["region_id"] for e in result.regions) == rid_tuple
    c.done()


def logistic_stump_recall(feats, labels, iters=80):
    """Best single-feature logistic classifier, recall at p >= 0.5. The
    informational baseline: plain classifiers chase accuracy, not recall."""
    X = (feats - feats.mean(axis=0)) / np.maximum(feats.std(axis=0), 1e-9)
    y = labels.astype(np.float64)
    a = np.zeros(X.shape[1])
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        z = a * X + b
        p = 1.0 / (1.0 + np.exp(-z))
        grad_a = ((p - y[:, None]) * X).mean(axis=0)
        grad_b = (p - y[:, None]).mean(axis=0)
        a -= 0.5 * grad_a
        b -= 0.5 * grad_b
    z = a * X + b
    p = 1.0 / (1.0 + np.exp(-z))
    losses = -(y[:, None] * np.log(np.maximum(p, 1e-12))
               + (1 - y[:, None]) * np.log(np.maximum(1 - p, 1e-12))).mean(axis=0)
    best = int(losses.argmin())
    predicted = p[:, best] >= 0.5
    return float((predicted & labels).sum() / max(labels.sum(), 1))


def test_relationship_constraints():
    c = Criterion("relationship constraints recall/selectivity", 60.0)
    counts = {"left_of": 500, "above": 500, "overlaps": 500, "random": 1500}
    train = geometric_triples(counts, seed=2)
    test = geometric_triples(counts, seed=1002)
    train_feats = train.pair_features()
    test_feats = test.pair_features()
    train_labels = np.array(train.predicates)
    test_labels = np.array(test.predicates)

    for predicate in ("left_of", "above", "overlaps"):
        cs = langrec.learn_relationship_constraints(
            train, predicate, con.CascadeParams(2, 0.96))
        train_mask = train_labels == predicate
        test_mask = test_labels == predicate
        train_pass = con.passes_matrix(cs, train_feats)
        test_pass = con.passes_matrix(cs, test_feats)
        train_recall = (train_pass & train_mask).sum() / train_mask.sum()
        test_recall = (test_pass & test_mask).sum() / test_mask.sum()
        selectivity = test_pass.sum() / len(test_labels)
        assert train_recall >= 0.92, (predicate, train_recall)
        assert test_recall >= 0.9, (predicate, test_recall)
        assert selectivity <= 0.5, (predicate, selectivity)
        stump_recall = logistic_stump_recall(train_feats, train_mask)
        print(f"\n  {predicate}: cascade train/test recall "
              f"{train_recall:.3f}/{test_recall:.3f}, selectivity "
              f"{selectivity:.3f}; unconstrained logistic stump recall "
              f"{stump_recall:.3f} (informational)")
    c.done()


def test_metric_formulas():
    c = Criterion("detection metric formulas (10 hand-computed cases)", 1.0)
    assert abs(con.harmonic_score(0.8, 0.6) - 0.5333333333) <= 1e-6
    cases = [
        # (tp, fp, n_pos, n_total) -> (precision, recall, f, sel, harmonic)
        ((8, 2, 10, 20), (0.8, 0.8, 0.8, 0.5, 2 * 0.8 * 0.5 / 1.3)),
        ((0, 0, 10, 20), (1.0, 0.0, 0.0, 0.0, 0.0)),
        ((10, 10, 10, 20), (0.5, 1.0, 2 / 3, 1.0, 0.0)),
        ((5, 0, 10, 10, ), (1.0, 0.5, 2 / 3, 0.5, 0.5)),
        ((1, 0, 1, 100), (1.0, 1.0, 1.0, 0.01, 2 * 0.99 / 1.99)),
        ((3, 1, 4, 8), (0.75, 0.75, 0.75, 0.5, 2 * 0.75 * 0.5 / 1.25)),
        ((9, 3, 10, 40), (0.75, 0.9, 2 * 0.75 * 0.9 / 1.65, 0.3,
                          2 * 0.9 * 0.7 / 1.6)),
        ((2, 8, 4, 20), (0.2, 0.5, 2 * 0.2 * 0.5 / 0.7, 0.5, 0.5)),
        ((4, 0, 5, 6), (1.0, 0.8, 2 * 0.8 / 1.8, 4 / 6,
                        2 * 0.8 * (1 - 4 / 6) / (0.8 + 1 - 4 / 6))),
        ((0, 20, 10, 30), (0.0, 0.0, 0.0, 2 / 3, 0.0)),
    ]
    for (tp, fp, n_pos, n_total), expected in cases:
        m = con.make_metrics(tp, fp, n_pos, n_total)
        got = (m.precision, m.recall, m.f_value, m.selectivity, m.harmonic)
        assert got == pytest.approx(expected, abs=1e-9), (tp, fp, n_pos, n_total)
    c.done()


def test_canvas_rule():
    c = Criterion("canvas boxes to banded constraints", 1.0)
    rng = np.random.default_rng(17)
    for n_boxes in (1, 2, 3):
        boxes = []
        for i in range(n_boxes):
            l, t = rng.uniform(0, 0.5, 2)
            boxes.append(CanvasBox(i, l, t, rng.uniform(l, 1.0),
                                   rng.uniform(t, 1.0)))
        cs = engine.canvas_to_constraints(boxes)
        assert len(cs.constraints) == 8 * n_boxes
        assert cs.arity == n_boxes
        # a result whose boxes equal the canvas boxes always passes
        w, h = rng.uniform(200, 1200, 2)
        pixel_boxes = [Box(b.left * w, b.top * h, b.right * w, b.bottom * h)
                       for b in sorted(boxes, key=lambda b: b.object_index)]
        feats = geometry.compute_position_features(ImageMeta("x", w, h),
                                                   pixel_boxes)
        assert con.satisfies_all(cs, feats)
    for _ in range(50):
        l, t = rng.uniform(0, 0.6, 2)
        box = CanvasBox(0, l, t, rng.uniform(l, 1.0), rng.uniform(t, 1.0))
        cs = engine.canvas_to_constraints([box])
        w, h = rng.uniform(50, 2000, 2)
        feats = geometry.compute_position_features(
            ImageMeta("x", w, h),
            [Box(box.left * w, box.top * h, box.right * w, box.bottom * h)])
        assert con.satisfies_all(cs, feats)
    c.done()


def test_determinism_and_persistence(degenerate_scene, tmp_path):
    c = Criterion("seeded determinism + lossless persistence", 60.0)
    dataset, index, dims, cache, result = degenerate_scene
    rng = np.random.default_rng(3)

    # seeded operations reproduce bitwise
    X = rng.normal(size=(300, 8))
    assert train_kmeans(X, 16, seed=5).tobytes() == \
        train_kmeans(X, 16, seed=5).tobytes()
    pos, neg = rng.normal(1, 1, (30, 8)), rng.normal(-1, 1, (30, 8))
    a = train_svm(pos, neg, seed=3)
    b = train_svm(pos, neg, seed=3)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias

    spec = store.SyntheticSpec(
        seed=11, dim=8,
        categories=store.default_categories(["a", "b"], 8, 1),
        predicates=["left_of"], images=6)
    r1 = store.generate_synthetic(spec, tmp_path / "s1")
    r2 = store.generate_synthetic(spec, tmp_path / "s2")
    for name in ("regions.jsonl", "features.bin", "labels.jsonl",
                 "triples.jsonl"):
        assert (tmp_path / "s1" / name).read_bytes() == \
            (tmp_path / "s2" / name).read_bytes()

    # index roundtrip preserves search results exactly
    index_path = tmp_path / "index.ivf"
    index.save(index_path)
    reloaded = InvertedIndex.load(index_path)
    for q in rng.normal(size=(10, 32)):
        for metric in ("l2", "inner_product"):
            ids_a, scores_a = index.search(q, metric, nprobe=256, top_r=20)
            ids_b, scores_b = reloaded.search(q, metric, nprobe=256, top_r=20)
            np.testing.assert_array_equal(ids_a, ids_b)
            np.testing.assert_array_equal(scores_a, scores_b)

    # classifier cache roundtrip is bit-exact
    clf = cache.get("person")
    cache2 = ClassifierCache(tmp_path / "cache2")
    cache2.put(clf)
    assert cache2.get("person").weights.tobytes() == clf.weights.tobytes()

    # full state roundtrip preserves query results exactly
    state = store.EngineState(index=index, dataset=dataset, classifiers=cache)
    store.save_state(tmp_path / "state", state)
    loaded = store.load_state(tmp_path / "state")
    query = Query([ObjectQuery(ByCategory("person")),
                   ObjectQuery(ByCategory("horse"))],
                  top_k=10, shortlist_r=10 ** 6, nprobe=256)
    before, _ = engine.run_query(query, index, cache, dims)
    loaded_dims = {m.image_id: (m.width, m.height)
                   for m in loaded.dataset.images}
    after, _ = engine.run_query(query, loaded.index, loaded.classifiers,
                                loaded_dims)
    assert [r.image_id for r in before] == [r.image_id for r in after]
    assert all(x.image_score == y.image_score for x, y in zip(before, after))
    np.testing.assert_array_equal(before[0].position_features,
                                  after[0].position_features)
    c.done()

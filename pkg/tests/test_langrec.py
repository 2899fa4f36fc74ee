import numpy as np
import pytest

from rbir import langrec
from rbir.constraint import CascadeParams, ConstraintSet
from rbir.errors import FormatError, InsufficientDataError, NotFoundError, OovError
from rbir.langrec import (EmbeddingTable, RelationshipClassifier, TripleDataset,
                          eval_relationship_detection, learn_relationship_constraints,
                          predict_relationships, recommend_language,
                          relationship_loss_and_grad, softmax,
                          train_relationship_classifier)
from rbir.store import sample_scene_boxes


def word_table(words, dim=10, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingTable({w: rng.normal(size=dim) for w in words}, dim)


def geometric_triples(counts, seed=0, width=640.0, height=480.0, gap=8.0):
    """Scenes whose boxes satisfy each predicate's defining rule by margin."""
    rng = np.random.default_rng(seed)
    subjects, objects, predicates, sb, ob = [], [], [], [], []
    max_side = 0.35 * min(width, height)
    for predicate, n in counts.items():
        for _ in range(n):
            s, o = sample_scene_boxes(predicate, rng, width, height, gap,
                                      40.0, max_side)
            subjects.append("thing")
            objects.append("stuff")
            predicates.append(predicate)
            sb.append(s.as_list())
            ob.append(o.as_list())
    n = len(predicates)
    return TripleDataset(subjects, objects, predicates,
                         np.array(sb), np.array(ob),
                         np.full(n, width), np.full(n, height))


def cx_ordered_triples(n_pos, n_neg, seed=0, width=640.0, height=480.0):
    """left_of holds exactly when subject.cx < object.cx (margin 10px); box
    extents overlap freely so only center-x features separate."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_pos + n_neg):
        positive = i < n_pos
        while True:
            cx = rng.uniform(60, width - 60, size=2)
            if abs(cx[0] - cx[1]) >= 10:
                break
        lo, hi = sorted(cx)
        scx, ocx = (lo, hi) if positive else (hi, lo)
        sw, ow = rng.uniform(80, 200, size=2)
        sh, oh = rng.uniform(40, 200, size=2)
        scy, ocy = rng.uniform(110, height - 110, size=2)

        def box(cx_, cy_, w_, h_):
            return [max(0.0, cx_ - w_ / 2), max(0.0, cy_ - h_ / 2),
                    min(width, cx_ + w_ / 2), min(height, cy_ + h_ / 2)]

        rows.append(("a", "b", "left_of" if positive else "misc",
                     box(scx, scy, sw, sh), box(ocx, ocy, ow, oh)))
    n = len(rows)
    return TripleDataset([r[0] for r in rows], [r[1] for r in rows],
                         [r[2] for r in rows],
                         np.array([r[3] for r in rows]),
                         np.array([r[4] for r in rows]),
                         np.full(n, width), np.full(n, height))


class TestEmbeddingTable:
    def test_load_with_header(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("2 3\nCat 1.0 2.0 3.0\ndog 4.0 5.0 6.0\n")
        table = EmbeddingTable.load(path)
        assert table.dim == 3
        np.testing.assert_array_equal(table.embed("cat"), [1, 2, 3])
        np.testing.assert_array_equal(table.embed("CAT"), [1, 2, 3])

    def test_load_without_header(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("cat 1.0 2.0\ndog 3.0 4.0\n")
        assert EmbeddingTable.load(path).dim == 2

    def test_multiword_mean(self, tmp_path):
        table = EmbeddingTable({"fire": np.array([1.0, 0.0]),
                                "truck": np.array([0.0, 1.0])}, 2)
        np.testing.assert_array_equal(table.embed("fire truck"), [0.5, 0.5])

    def test_oov_names_word(self):
        table = word_table(["person", "riding"])
        with pytest.raises(OovError, match="unicorn"):
            table.embed("person riding unicorn")

    def test_dim_mismatch(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("a 1.0 2.0\nb 1.0\n")
        with pytest.raises(FormatError):
            EmbeddingTable.load(path)

    def test_save_load_roundtrip(self, tmp_path):
        table = word_table(["person", "horse"], dim=4)
        table.save(tmp_path / "emb.txt")
        back = EmbeddingTable.load(tmp_path / "emb.txt")
        for w in ("person", "horse"):
            np.testing.assert_array_equal(back.embed(w), table.embed(w))


class TestPredict:
    def test_softmax_normalized(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p = softmax(rng.normal(size=7) * 10)
            assert abs(p.sum() - 1.0) < 1e-6
            assert (p > 0).all()

    def test_zero_projection_uniform(self):
        table = word_table(["a", "b"])
        clf = RelationshipClassifier(("on", "ride", "under"),
                                     np.zeros((3, 20)), np.zeros(3))
        ranked = predict_relationships("a", "b", table, clf, top_m=3)
        assert [p for _, p in ranked] == pytest.approx([1 / 3] * 3)
        # ties resolve in vocabulary order
        assert [name for name, _ in ranked] == ["on", "ride", "under"]

    def test_sign_rule_learnable(self):
        # Predicate is determined by the sign of e(cat1)[0]; a held-out pair
        # set must be predicted by the trained projection. The first embedding
        # coordinate is kept away from zero so the rule has a margin.
        rng = np.random.default_rng(2)
        words = [f"w{i}" for i in range(120)]
        vecs = {w: rng.normal(size=6) for w in words}
        for w in words:
            vecs[w][0] = rng.choice([-1, 1]) * rng.uniform(0.3, 1.5)
        table = EmbeddingTable(vecs, 6)
        rule = lambda c1: "pos" if table.embed(c1)[0] > 0 else "neg"
        train_words, test_words = words[:84], words[84:]

        def make(word_pool, n, seed):
            r = np.random.default_rng(seed)
            pairs = [(word_pool[r.integers(len(word_pool))],
                      words[r.integers(len(words))]) for _ in range(n)]
            boxes = np.tile([0.0, 0.0, 10.0, 10.0], (n, 1))
            return TripleDataset([a for a, _ in pairs], [b for _, b in pairs],
                                 [rule(a) for a, _ in pairs], boxes.copy(),
                                 boxes.copy(), np.full(n, 100.0), np.full(n, 100.0))

        clf = train_relationship_classifier(make(train_words, 600, 3), table)
        test = make(test_words, 100, 4)
        hits = 0
        for subj, truth in zip(test.subjects, test.predicates):
            (top, _), = predict_relationships(subj, "w0", table, clf, top_m=1)
            hits += top == truth
        assert hits / 100 >= 0.95


class TestTraining:
    def small_triples(self, n=40, seed=0):
        rng = np.random.default_rng(seed)
        words = ["person", "horse", "dog", "cart"]
        preds = ["ride", "on", "next to"]
        boxes = np.tile([0.0, 0.0, 10.0, 10.0], (n, 1))
        return TripleDataset(
            [words[i] for i in rng.integers(0, 4, n)],
            [words[i] for i in rng.integers(0, 4, n)],
            [preds[i] for i in rng.integers(0, 3, n)],
            boxes.copy(), boxes.copy(), np.full(n, 100.0), np.full(n, 100.0))

    def test_deterministic(self):
        table = word_table(["person", "horse", "dog", "cart"])
        triples = self.small_triples()
        a = train_relationship_classifier(triples, table, seed=5)
        b = train_relationship_classifier(triples, table, seed=5)
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()

    def test_loss_non_increasing(self):
        table = word_table(["person", "horse", "dog", "cart"])
        _, trace = train_relationship_classifier(self.small_triples(), table,
                                                 return_trace=True)
        assert all(a >= b for a, b in zip(trace, trace[1:]))

    def test_single_predicate_degenerate(self):
        table = word_table(["person", "horse"])
        n = 12
        boxes = np.tile([0.0, 0.0, 10.0, 10.0], (n, 1))
        triples = TripleDataset(["person"] * n, ["horse"] * n, ["ride"] * n,
                                boxes.copy(), boxes.copy(),
                                np.full(n, 100.0), np.full(n, 100.0))
        clf = train_relationship_classifier(triples, table)
        (pred, p), = predict_relationships("person", "horse", table, clf, top_m=1)
        assert pred == "ride" and p >= 0.99

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 8))
        Y = rng.integers(0, 4, 30)
        W = rng.normal(size=(4, 8))
        b = rng.normal(size=4)
        _, grad_w, grad_b = relationship_loss_and_grad(W.copy(), b.copy(), X, Y)
        h = 1e-6
        for _ in range(5):
            i, j = rng.integers(0, 4), rng.integers(0, 8)
            up, down = W.copy(), W.copy()
            up[i, j] += h
            down[i, j] -= h
            numeric = (relationship_loss_and_grad(up, b.copy(), X, Y)[0]
                       - relationship_loss_and_grad(down, b.copy(), X, Y)[0]) / (2 * h)
            assert abs(numeric - grad_w[i, j]) <= 1e-4 * max(1.0, abs(numeric))
        for i in range(4):
            up, down = b.copy(), b.copy()
            up[i] += h
            down[i] -= h
            numeric = (relationship_loss_and_grad(W.copy(), up, X, Y)[0]
                       - relationship_loss_and_grad(W.copy(), down, X, Y)[0]) / (2 * h)
            assert abs(numeric - grad_b[i]) <= 1e-4 * max(1.0, abs(numeric))

    def test_oov_triples_skipped_and_counted(self):
        table = word_table(["person", "horse"])
        n = 10
        boxes = np.tile([0.0, 0.0, 10.0, 10.0], (n, 1))
        triples = TripleDataset(["person"] * 5 + ["ghost"] * 5, ["horse"] * n,
                                ["ride"] * n, boxes.copy(), boxes.copy(),
                                np.full(n, 100.0), np.full(n, 100.0))
        clf = train_relationship_classifier(triples, table)
        assert clf.oov_skipped == 5

    def test_empty_dataset(self):
        table = word_table(["a"])
        empty = TripleDataset([], [], [], np.empty((0, 4)), np.empty((0, 4)),
                              np.empty(0), np.empty(0))
        with pytest.raises(InsufficientDataError):
            train_relationship_classifier(empty, table)

    def test_classifier_persistence(self, tmp_path):
        table = word_table(["person", "horse", "dog", "cart"])
        clf = train_relationship_classifier(self.small_triples(), table)
        clf.save(tmp_path / "rel")
        back = RelationshipClassifier.load(tmp_path / "rel")
        assert back.vocabulary == clf.vocabulary
        np.testing.assert_allclose(back.weights, clf.weights, rtol=1e-6)


class TestRelationshipConstraints:
    def test_cx_rule_recovered(self):
        triples = cx_ordered_triples(120, 120, seed=3)
        cs = learn_relationship_constraints(triples, "left_of",
                                            CascadeParams(2, 0.96))
        assert cs.provenance == "language" and cs.arity == 2
        from rbir import geometry
        cat = geometry.catalog(2)
        first = cs.constraints[0]
        assert ".cx-O" in cat.descriptors[first.feature_index].name
        assert first.sign == -1
        assert -80.0 < first.threshold < 0.0
        feats = triples.pair_features()
        labels = np.array(triples.predicates) == "left_of"
        from rbir.constraint import passes_matrix
        passing = passes_matrix(cs, feats)
        recall = (passing & labels).sum() / labels.sum()
        assert recall >= 0.96 ** len(cs.constraints)
        fp_rate = (passing & ~labels).sum() / (~labels).sum()
        assert fp_rate <= 0.1

    def test_min_samples(self):
        triples = cx_ordered_triples(3, 20)
        with pytest.raises(InsufficientDataError):
            learn_relationship_constraints(triples, "left_of", min_samples=10)

    def test_geometric_predicates_recall(self):
        counts = {"left_of": 60, "above": 60, "overlaps": 60, "random": 120}
        train = geometric_triples(counts, seed=11)
        for predicate in ("left_of", "above", "overlaps"):
            cs = learn_relationship_constraints(train, predicate,
                                                CascadeParams(2, 0.96))
            feats = train.pair_features()
            labels = np.array(train.predicates) == predicate
            from rbir.constraint import passes_matrix
            passing = passes_matrix(cs, feats)
            assert (passing & labels).sum() / labels.sum() >= 0.92


class TestStoreAndRecommend:
    def make_store(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        triples = geometric_triples({"left_of": 40, "above": 40, "random": 60},
                                    seed=21)
        for predicate in ("left_of", "above"):
            store.put(predicate,
                      learn_relationship_constraints(triples, predicate,
                                                     CascadeParams(2, 0.96)))
        return store

    def test_roundtrip_and_listing(self, tmp_path):
        store = self.make_store(tmp_path)
        assert store.predicates() == ["above", "left_of"]
        cs = store.get("left_of")
        assert isinstance(cs, ConstraintSet) and cs.arity == 2
        with pytest.raises(NotFoundError):
            store.get("under")

    def test_arity_enforced(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        with pytest.raises(ValueError):
            store.put("x", ConstraintSet(1))

    def test_recommend_joins_store(self, tmp_path):
        store = self.make_store(tmp_path)
        table = word_table(["person", "horse"])
        clf = RelationshipClassifier(("above", "left_of", "under"),
                                     np.zeros((3, 20)), np.array([0.0, 1.0, 2.0]))
        recs, skipped = recommend_language("person", "horse", table, clf, store,
                                           top_m=3)
        assert [r[0] for r in recs] == ["left_of", "above"]  # "under" unstored
        assert skipped == ["under"]
        assert all(isinstance(r[2], ConstraintSet) for r in recs)

    def test_top_m_limits(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        triples = geometric_triples({"left_of": 30, "random": 30}, seed=22)
        store.put("left_of", learn_relationship_constraints(triples, "left_of"))
        table = word_table(["person", "horse"])
        clf = RelationshipClassifier(("left_of", "ride"), np.zeros((2, 20)),
                                     np.zeros(2))
        recs, _ = recommend_language("person", "horse", table, clf, store, top_m=1)
        assert len(recs) <= 1 and recs[0][0] == "left_of"

    def test_empty_store(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        table = word_table(["a", "b"])
        clf = RelationshipClassifier(("x",), np.zeros((1, 20)), np.zeros(1))
        assert recommend_language("a", "b", table, clf, store) == ([], [])


class TestEval:
    def test_accept_everything(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        store.put("left_of", ConstraintSet(2, (), "language"))
        triples = geometric_triples({"left_of": 15, "random": 15}, seed=31)
        report = eval_relationship_detection(store, triples)
        m = report.per_predicate["left_of"]
        assert m.recall == 1.0 and m.selectivity == 1.0 and m.harmonic == 0.0

    def test_min_test_exclusion(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        store.put("left_of", ConstraintSet(2, (), "language"))
        store.put("above", ConstraintSet(2, (), "language"))
        triples = geometric_triples({"left_of": 15, "above": 3}, seed=32)
        report = eval_relationship_detection(store, triples, min_test=10)
        assert "above" in report.excluded
        assert list(report.per_predicate) == ["left_of"]

    def test_geometric_detection_quality(self, tmp_path):
        store = langrec.RelationshipConstraintStore(tmp_path / "rel")
        train = geometric_triples({"left_of": 150, "above": 150, "overlaps": 150,
                                   "random": 400}, seed=32)
        for predicate in ("left_of", "above", "overlaps"):
            store.put(predicate, learn_relationship_constraints(
                train, predicate, CascadeParams(2, 0.96)))
        test = geometric_triples({"left_of": 150, "above": 150, "overlaps": 150,
                                  "random": 400}, seed=532)
        report = eval_relationship_detection(store, test)
        assert report.mean_all["recall"] >= 0.9
        assert report.mean_all["selectivity"] <= 0.5

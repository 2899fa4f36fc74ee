"""Both recommendation routes: mined layout clusters and language priors.

Mining inspects what the database actually returned for a query and offers
one editable constraint set per typical layout. The language route predicts
likely relationships from the category names alone and attaches constraint
sets learned offline from annotated triples. Both land in the same currency:
(feature, threshold, sign) chips the user can tweak.
"""

import tempfile

import numpy as np

from rbir import geometry, langrec, mining
from rbir.constraint import CascadeParams
from rbir.langrec import EmbeddingTable, TripleDataset
from rbir.store import sample_scene_boxes

rng = np.random.default_rng(0)
width, height = 640.0, 480.0
catalog = geometry.catalog(2)


def scenes(predicate, n, seed):
    r = np.random.default_rng(seed)
    s_boxes, o_boxes = [], []
    for _ in range(n):
        s, o = sample_scene_boxes(predicate, r, width, height, 8.0, 40.0, 200.0)
        s_boxes.append(s.as_list())
        o_boxes.append(o.as_list())
    return np.array(s_boxes), np.array(o_boxes)


# --- mining: cluster the layouts of "search results" -------------------------
result_boxes = [scenes("on_top_of", 45, 1), scenes("left_of", 45, 2),
                scenes("inside", 30, 3)]
refs, rows = [], []
for group, (sb, ob) in enumerate(result_boxes):
    feats = geometry.position_features_batch(width, height, [sb, ob])
    for i in range(len(sb)):
        refs.append({"image_id": f"g{group}-{i}", "group": group})
        rows.append(feats[i])

recs = mining.mine_recommendations(zip(refs, np.vstack(rows)),
                                   mining.MiningParams(clusters=3, seed=9))
print("mined layout recommendations (largest cluster first):")
for rec in recs:
    head = rec.constraint_set.constraints[0]
    print(f"  cluster of {rec.cluster_size:3d}: first constraint "
          f"{catalog.descriptors[head.feature_index].name} "
          f"{'>=' if head.sign > 0 else '<='} {head.threshold:.2f} "
          f"(training F {rec.metrics.f_value:.2f}, "
          f"representative {rec.representative['image_id']})")

# --- language: predict predicates, attach stored constraint sets -------------
words = ["person", "horse", "dog", "surfboard"]
table = EmbeddingTable({w: rng.normal(size=12) for w in words}, 12)

predicates = {"ride": "on_top_of", "next to": "left_of", "inside": "inside"}
records = []
for label, template in predicates.items():
    sb, ob = scenes(template, 40, seed=hash(label) % 2 ** 31)
    for i in range(len(sb)):
        subj, obj = ("person", "horse") if label == "ride" else ("dog", "horse")
        records.append((subj, obj, label, sb[i], ob[i]))
triples = TripleDataset(
    [r[0] for r in records], [r[1] for r in records], [r[2] for r in records],
    np.array([r[3] for r in records]), np.array([r[4] for r in records]),
    np.full(len(records), width), np.full(len(records), height))

clf = langrec.train_relationship_classifier(triples, table, seed=1)
store_dir = tempfile.mkdtemp(prefix="rbir-rel-")
rel_store = langrec.RelationshipConstraintStore(store_dir)
for label in predicates:
    rel_store.put(label, langrec.learn_relationship_constraints(
        triples, label, CascadeParams(2, 0.96), min_samples=10))

recs, skipped = langrec.recommend_language("person", "horse", table, clf,
                                           rel_store, top_m=3)
print("\nlanguage recommendations for ('person', 'horse'):")
for predicate, likelihood, cs in recs:
    head = cs.constraints[0]
    print(f"  {predicate!r} (p={likelihood:.2f}): "
          f"{catalog.descriptors[head.feature_index].name} "
          f"{'>=' if head.sign > 0 else '<='} {head.threshold:.2f} "
          f"(+{len(cs.constraints) - 1} more)")

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from rbir.cli import main
from rbir.service import Service, ServiceConfig, create_app


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Full CLI pipeline: synth -> ingest -> build-index -> classifiers ->
    relationships. Everything downstream reads this state directory."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    state = root / "state"
    assert main(["synth", "--out", str(data), "--seed", "5", "--images", "40",
                 "--dim", "16", "--distractors", "2"]) == 0
    assert main(["ingest", "--state", str(state),
                 "--manifest", str(data / "manifest.json")]) == 0
    assert main(["build-index", "--state", str(state), "--nlist", "64",
                 "--pq-m", "4", "--nprobe", "64", "--seed", "1"]) == 0
    for name in ("person", "horse"):
        assert main(["train-classifier", "--state", str(state), "--name", name,
                     "--labels", str(data / "labels.jsonl"), "--epochs", "30",
                     "--seed", "2"]) == 0
    embeddings = root / "embeddings.txt"
    rng = np.random.default_rng(3)
    with open(embeddings, "w") as fh:
        for word in ("person", "horse", "dog"):
            values = " ".join(repr(float(v)) for v in rng.normal(size=8))
            fh.write(f"{word} {values}\n")
    assert main(["train-relationships", "--state", str(state),
                 "--triples", str(data / "triples.jsonl"),
                 "--embeddings", str(embeddings), "--seed", "4"]) == 0
    assert main(["learn-rel-constraints", "--state", str(state),
                 "--triples", str(data / "triples.jsonl"),
                 "--nc", "2", "--min-samples", "5"]) == 0
    query = root / "query.json"
    query.write_text(json.dumps({
        "objects": [{"by_category": "person"}, {"by_category": "horse"}],
        "top_k": 5, "t": 1, "nprobe": 64, "shortlist_r": 100000,
    }))
    return root, data, state, query


class TestCli:
    def test_catalog_output(self, capsys):
        assert main(["catalog", "--arity", "2"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 82
        first = json.loads(lines[0])
        assert set(first) == {"index", "name", "unit"}

    def test_catalog_bad_arity_is_usage_error(self, capsys):
        assert main(["catalog", "--arity", "9"]) == 1

    def test_missing_query_file_is_usage_error(self, workspace, capsys):
        root, data, state, query = workspace
        assert main(["search", "--state", str(state),
                     "--query", str(root / "absent.json")]) == 1

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["frobnicate"]) == 1
        assert main([]) == 1

    def test_search_deterministic(self, workspace, capsys):
        root, data, state, query = workspace
        assert main(["search", "--state", str(state), "--query", str(query)]) == 0
        first = capsys.readouterr().out
        assert main(["search", "--state", str(state), "--query", str(query)]) == 0
        second = capsys.readouterr().out
        a, b = json.loads(first), json.loads(second)
        a.pop("snapshot_id"), b.pop("snapshot_id")
        assert a == b
        assert len(a["results"]) == 5
        assert a["shortlist"]["arity"] == 2

    def test_search_runtime_error_without_index(self, tmp_path, capsys):
        query = tmp_path / "q.json"
        query.write_text(json.dumps({"objects": [{"by_category": "person"}]}))
        assert main(["search", "--state", str(tmp_path / "empty"),
                     "--query", str(query)]) == 2

    def test_recommend_language(self, workspace, capsys):
        root, data, state, query = workspace
        assert main(["recommend", "language", "--state", str(state),
                     "--cat1", "person", "--cat2", "horse", "--top-m", "3"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["recommendations"]
        rec = out["recommendations"][0]
        assert set(rec) == {"predicate", "likelihood", "constraints"}
        assert rec["constraints"]["arity"] == 2

    def test_recommend_mining(self, workspace, capsys):
        root, data, state, query = workspace
        assert main(["recommend", "mining", "--state", str(state),
                     "--query", str(query), "--K", "3", "--seed", "0"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert isinstance(out, list)
        if out:
            assert set(out[0]) == {"constraints", "representative",
                                   "cluster_size", "metrics"}

    def test_eval_cluster_reproduction(self, capsys):
        assert main(["eval", "cluster-reproduction", "--seed", "7",
                     "--nc-values", "1,2,3"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out["per_n_c"]) == {"1", "2", "3"}

    def test_eval_relationship_detection(self, workspace, capsys):
        root, data, state, query = workspace
        assert main(["eval", "relationship-detection", "--state", str(state),
                     "--triples", str(data / "triples.jsonl"),
                     "--min-test", "5"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["per_predicate"]

    def test_eval_ann_recall_monotone(self, workspace, capsys):
        root, data, state, query = workspace
        assert main(["eval", "ann-recall", "--state", str(state),
                     "--ks", "1,8,64", "--queries", "30", "--seed", "9"]) == 0
        out = json.loads(capsys.readouterr().out)
        recalls = [out["per_ks"][k]["recall"] for k in ("1", "8", "64")]
        assert all(a <= b + 1e-12 for a, b in zip(recalls, recalls[1:]))


@pytest.fixture(scope="module")
def client(workspace):
    root, data, state, query = workspace
    return TestClient(create_app(ServiceConfig(state_dir=state)))


class TestService:
    def test_fresh_state_stats(self, tmp_path):
        fresh = TestClient(create_app(ServiceConfig(state_dir=tmp_path / "s")))
        resp = fresh.get("/index/stats")
        assert resp.status_code == 200
        body = resp.json()
        assert body["regions"] == 0 and body["images"] == 0

    def test_stats_after_build(self, client):
        body = client.get("/index/stats").json()
        assert body["regions"] == 160 and body["images"] == 40
        assert body["dim"] == 16

    def test_catalog_endpoint(self, client):
        assert len(client.get("/catalog", params={"arity": 3}).json()) == 213

    def test_classifier_listing(self, client):
        assert client.get("/classifiers").json() == ["horse", "person"]

    def test_search_deterministic_bytes(self, client):
        body = {"objects": [{"by_category": "person"},
                            {"by_category": "horse"}],
                "top_k": 5, "nprobe": 64, "shortlist_r": 100000}
        a = client.post("/search", json=body)
        b = client.post("/search", json=body)
        assert a.status_code == 200
        assert a.content == b.content
        payload = a.json()["shortlist"]
        assert payload["images"][0]["combos"][0]["features"]

    def test_search_arity_mismatch_is_invalid_request(self, client):
        body = {"objects": [{"by_category": "person"}],
                "constraints": {"arity": 2, "provenance": "manual",
                                "constraints": []}}
        resp = client.post("/search", json=body)
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid_request"

    def test_search_unknown_category_is_not_found(self, client):
        resp = client.post("/search",
                           json={"objects": [{"by_category": "unicorn"}]})
        assert resp.status_code == 404
        assert resp.json()["code"] == "not_found"

    def test_stale_snapshot_pin_rejected(self, client):
        resp = client.post("/search", json={
            "objects": [{"by_category": "person"}], "snapshot_id": "deadbeef"})
        assert resp.status_code == 400

    def test_canvas_endpoint(self, client):
        resp = client.post("/canvas/constraints", json={
            "boxes": [{"object_index": 0, "left": 0.2, "top": 0.1,
                       "right": 0.5, "bottom": 0.6}]})
        assert resp.status_code == 200
        cs = resp.json()
        assert cs["arity"] == 1 and len(cs["constraints"]) == 8
        thetas = sorted(c["theta"] for c in cs["constraints"]
                        if c["name"] == "O1.left/I.width")
        assert thetas == pytest.approx([0.18, 0.22])

    def test_train_classifier_endpoint(self, client):
        rng = np.random.default_rng(0)
        resp = client.post("/classifiers/train", json={
            "name": "boxy", "kind": "attribute",
            "positive_vectors": rng.normal(size=(6, 16)).tolist(),
            "negative_vectors": rng.normal(size=(6, 16)).tolist(),
            "seed": 1})
        assert resp.status_code == 200
        assert resp.json() == {"name": "boxy", "dim": 16}
        assert "boxy" in client.get("/classifiers").json()

    def test_train_classifier_default_negatives(self, client):
        resp = client.post("/classifiers/train", json={
            "name": "sampled", "positive_region_ids": [0, 1, 2], "seed": 3})
        assert resp.status_code == 200

    def test_recommend_language_endpoint(self, client):
        resp = client.post("/recommend/language", json={
            "category1": "person", "category2": "horse", "top_m": 2})
        assert resp.status_code == 200
        assert resp.json()["recommendations"]

    def test_recommend_language_oov(self, client):
        resp = client.post("/recommend/language", json={
            "category1": "person", "category2": "zeppelin"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "oov"

    def test_eval_ann_recall_endpoint(self, client):
        resp = client.post("/eval/ann-recall", json={"ks": [4, 64],
                                                     "queries": 20})
        assert resp.status_code == 200
        per_ks = resp.json()["per_ks"]
        assert per_ks["4"]["recall"] <= per_ks["64"]["recall"] + 1e-12

    def test_eval_cluster_endpoint(self, client):
        resp = client.post("/eval/cluster-reproduction",
                           json={"seed": 1, "n_c_values": [1, 3]})
        assert resp.status_code == 200

    def test_bad_json_body(self, client):
        resp = client.post("/search", content=b"{nope",
                           headers={"content-type": "application/json"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "invalid_request"

    def test_responses_validate_against_golden_schemas(self, client):
        import pathlib
        import jsonschema
        golden = pathlib.Path(__file__).parent / "golden"
        search_schema = json.loads((golden / "search_response.schema.json").read_text())
        cs_schema = json.loads((golden / "constraint_set.schema.json").read_text())
        rec_schemas = json.loads((golden / "recommendations.schema.json").read_text())

        search = client.post("/search", json={
            "objects": [{"by_category": "person"}, {"by_category": "horse"}],
            "top_k": 5, "nprobe": 64}).json()
        jsonschema.validate(search, search_schema)

        canvas = client.post("/canvas/constraints", json={
            "boxes": [{"object_index": 0, "left": 0.1, "top": 0.1,
                       "right": 0.4, "bottom": 0.5}]}).json()
        jsonschema.validate(canvas, cs_schema)

        mining = client.post("/recommend/mining", json={
            "objects": [{"by_category": "person"}, {"by_category": "horse"}],
            "K": 3}).json()
        schema = dict(rec_schemas["mining"])
        schema["definitions"] = {"constraint_set": cs_schema}
        jsonschema.validate(mining, schema)

        language = client.post("/recommend/language", json={
            "category1": "person", "category2": "horse", "top_m": 3}).json()
        schema = dict(rec_schemas["language"])
        schema["definitions"] = {"constraint_set": cs_schema}
        jsonschema.validate(language, schema)

    def test_search_offset_pagination(self, client):
        body = {"objects": [{"by_category": "person"}], "top_k": 4,
                "nprobe": 64}
        first = client.post("/search", json=body).json()
        paged = client.post("/search", json={**body, "offset": 2}).json()
        assert paged["offset"] == 2
        assert [r["image_id"] for r in paged["results"][:2]] == \
            [r["image_id"] for r in first["results"][2:4]]

    def test_canvas_endpoint_matches_frontend_fixtures(self, client):
        # The frontend's parity fixtures must equal the live endpoint output;
        # the TS suite pins its implementation to the same fixtures.
        import pathlib
        fixture = pathlib.Path(__file__).parent.parent / "frontend" / "tests" \
            / "fixtures" / "canvas_parity.json"
        if not fixture.exists():
            pytest.skip("frontend fixtures not generated")
        cases = json.loads(fixture.read_text())
        assert len(cases) == 100
        for case in cases:
            resp = client.post("/canvas/constraints", json={"boxes": case["boxes"]})
            assert resp.status_code == 200
            assert resp.json() == case["expected"]

    def test_ingest_and_rebuild_swaps_snapshot(self, workspace, tmp_path):
        root, data, state, query = workspace
        service_client = TestClient(create_app(ServiceConfig(
            state_dir=tmp_path / "fresh_state")))
        before = service_client.get("/index/stats").json()["snapshot_id"]
        resp = service_client.post("/datasets/ingest",
                                   json={"manifest_path":
                                         str(data / "manifest.json")})
        assert resp.status_code == 200
        assert resp.json()["counts"] == {"images": 40, "regions": 160}
        resp = service_client.post("/index/build", json={
            "params": {"nlist": 32, "pq_m": 4, "nprobe": 32, "seed": 2}})
        assert resp.status_code == 200
        after = resp.json()["snapshot_id"]
        assert after != before
        assert resp.json()["stats"]["regions"] == 160

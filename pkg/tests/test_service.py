from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from mebn.service import app

CORPUS = Path(__file__).parent.parent / "src/mebn/corpus"
THEORY = (CORPUS / "startrek.mtheory").read_text()
ASSOCIATION = (CORPUS / "association.mev").read_text()
FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


class TestHealth:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"

    def test_openapi_lists_every_surface(self, client):
        paths = client.get("/openapi.json").json()["paths"]
        assert {"/validate", "/query", "/ground", "/corpus/scenarios",
                "/corpus/run", "/health"} <= set(paths)


class TestValidateEndpoint:
    def test_accepts_corpus(self, client):
        resp = client.post("/validate", json={"theory": THEORY})
        assert resp.status_code == 200
        body = resp.json()
        assert body["ok"] is True and body["max_depth"] == 6

    def test_reports_violations(self, client):
        text = (FIXTURES / "duplicate_home.mtheory").read_text()
        resp = client.post("/validate", json={"theory": text})
        assert resp.status_code == 200
        body = resp.json()
        assert body["ok"] is False
        assert body["violations"][0]["tag"] == "UniqueHome"

    def test_parse_error_maps_to_422_with_stage(self, client):
        resp = client.post("/validate", json={"theory": "theory ???"})
        assert resp.status_code == 422
        body = resp.json()
        assert body["stage"] == "parse"
        assert "error" in body


class TestQueryEndpoint:
    def test_posterior(self, client):
        resp = client.post("/query", json={
            "theory": THEORY, "evidence": ASSOCIATION,
            "targets": ["Exists(!ST4)"], "include_dot": True})
        assert resp.status_code == 200
        body = resp.json()
        result = body["results"][0]
        assert result["target"] == "Exists(!ST4)"
        assert result["probs"][1] == pytest.approx(2 / 3, abs=1e-9)
        assert result["ssbn_nodes"] == 5
        assert body["ssbn_nodes_unpruned"] >= result["ssbn_nodes"]
        assert body["dot"].startswith("digraph")

    def test_oracle_agrees(self, client):
        payload = {"theory": THEORY, "evidence": ASSOCIATION,
                   "targets": ["Exists(!ST4)"]}
        ve = client.post("/query", json=payload).json()["results"][0]
        payload["oracle"] = True
        bf = client.post("/query", json=payload).json()["results"][0]
        assert ve["states"] == bf["states"]
        for a, b in zip(ve["probs"], bf["probs"]):
            assert a == pytest.approx(b, abs=1e-9)

    def test_limits_enforced(self, client):
        resp = client.post("/query", json={
            "theory": THEORY, "evidence": ASSOCIATION,
            "targets": ["Exists(!ST4)"],
            "limits": {"max_nodes": 2}})
        assert resp.status_code == 422
        assert resp.json()["stage"] == "ground"

    def test_inference_error_stage(self, client):
        evidence = ASSOCIATION + "\nSubject(!SR4) = !ST1\nExists(!ST4) = True\n"
        resp = client.post("/query", json={
            "theory": THEORY, "evidence": evidence,
            "targets": ["Exists(!ST4)"]})
        assert resp.status_code == 422
        assert resp.json()["stage"] == "infer"

    def test_unknown_target_rv(self, client):
        resp = client.post("/query", json={
            "theory": THEORY, "evidence": ASSOCIATION,
            "targets": ["Tribble(!ST1)"]})
        assert resp.status_code == 422
        assert resp.json()["stage"] == "parse"


class TestGroundEndpoint:
    def test_ssbn_and_dot(self, client):
        resp = client.post("/ground", json={
            "theory": THEORY, "evidence": ASSOCIATION,
            "targets": ["Exists(!ST4)"]})
        assert resp.status_code == 200
        body = resp.json()
        ids = [n["id"] for n in body["ssbn"]["nodes"]]
        assert "Exists(!ST4)" in ids and "Subject(!SR4)" in ids
        assert '"Subject(!SR4)" -> "Exists(!ST4)";' in body["dot"]

    def test_unpruned_keeps_evidence_components(self, client):
        pruned = client.post("/ground", json={
            "theory": THEORY, "evidence": ASSOCIATION,
            "targets": ["Exists(!ST4)"]}).json()
        full = client.post("/ground", json={
            "theory": THEORY, "evidence": ASSOCIATION,
            "targets": ["Exists(!ST4)"], "prune": False}).json()
        assert len(full["ssbn"]["nodes"]) > len(pruned["ssbn"]["nodes"])


class TestCorpusEndpoints:
    def test_scenario_listing(self, client):
        resp = client.get("/corpus/scenarios")
        assert resp.status_code == 200
        names = {s["name"] for s in resp.json()}
        assert "danger_basic" in names and "zone_recursion" in names

    def test_corpus_run(self, client):
        resp = client.post("/corpus/run")
        assert resp.status_code == 200
        body = resp.json()
        assert body["ok"] is True
        assert all(r["status"] == "pass" for r in body["rows"])

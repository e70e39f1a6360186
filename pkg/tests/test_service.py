import numpy as np
import pytest
from fastapi.testclient import TestClient

from covbalance.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def table(rng, n, p, prefix="u"):
    return {
        "unit_ids": [f"{prefix}{i}" for i in range(n)],
        "values": rng.normal(size=(n, p)).tolist(),
    }


GA = {"population": 12, "elites": 4, "iterations": 10}


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"


class TestDesignEndpoint:
    def test_happy_path(self, client, rng):
        request = {
            "covariates": table(rng, 10, 2),
            "groups": 2,
            "seed": 4,
            "ga": GA,
        }
        reply = client.post("/design", json=request)
        assert reply.status_code == 200
        body = reply.json()
        assert len(body["assignments"]) == 10
        groups = [row["group"] for row in body["assignments"]]
        assert sorted(set(groups)) == [1, 2]
        assert groups.count(1) == 5
        treatments = {row["group"]: row["treatment"] for row in body["assignments"]}
        assert sorted(treatments.values()) == [1, 2]
        assert body["report"]["criterion"] >= 0
        assert body["report"]["seed"] == 4

    def test_deterministic(self, client, rng):
        request = {"covariates": table(rng, 8, 1), "groups": 2, "seed": 9, "ga": GA}
        first = client.post("/design", json=request).json()
        second = client.post("/design", json=request).json()
        assert first == second

    def test_too_few_units(self, client, rng):
        request = {"covariates": table(rng, 2, 1), "groups": 3, "seed": 0, "ga": GA}
        reply = client.post("/design", json=request)
        assert reply.status_code == 400

    def test_pca_params_exclusive(self, client, rng):
        request = {
            "covariates": table(rng, 10, 3),
            "groups": 2,
            "seed": 0,
            "ga": GA,
            "pca": {"components": 2, "variance_fraction": 0.8},
        }
        assert client.post("/design", json=request).status_code == 422

    def test_invalid_ga_config(self, client, rng):
        request = {
            "covariates": table(rng, 10, 2),
            "groups": 2,
            "seed": 0,
            "ga": {"population": 10, "elites": 3, "iterations": 5},
        }
        assert client.post("/design", json=request).status_code == 400

    def test_pca_reduces(self, client, rng):
        request = {
            "covariates": table(rng, 12, 4),
            "groups": 2,
            "seed": 0,
            "ga": GA,
            "pca": {"variance_fraction": 0.9},
        }
        body = client.post("/design", json=request).json()
        assert 1 <= body["report"]["pca_components"] <= 4


class TestOnlineEndpoints:
    def test_init_then_assign(self, client, rng):
        init = {
            "covariates": table(rng, 8, 2, prefix="a"),
            "groups": 2,
            "seed": 3,
            "ga": GA,
        }
        reply = client.post("/online/init", json=init)
        assert reply.status_code == 200
        body = reply.json()
        assert body["group_sizes"] == [4, 4]
        assign = {"state": body["state"], "batch": table(rng, 4, 2, prefix="b")}
        reply2 = client.post("/online/assign", json=assign)
        assert reply2.status_code == 200
        body2 = reply2.json()
        assert body2["group_sizes"] == [6, 6]
        assert len(body2["assignments"]) == 4
        assert body2["state"]["payload"]["units"]["ids"][:8] == init["covariates"]["unit_ids"]

    def test_assign_rejects_corrupted_state(self, client, rng):
        init = {
            "covariates": table(rng, 6, 1, prefix="c"),
            "groups": 2,
            "seed": 1,
            "ga": GA,
        }
        state = client.post("/online/init", json=init).json()["state"]
        state["payload"]["group_count"] = 3  # checksum now stale
        reply = client.post(
            "/online/assign", json={"state": state, "batch": table(rng, 2, 1, prefix="d")}
        )
        assert reply.status_code == 409
        assert "checksum" in reply.json()["detail"]

    def test_assign_rejects_wrong_version(self, client, rng):
        init = {
            "covariates": table(rng, 6, 1, prefix="e"),
            "groups": 2,
            "seed": 1,
            "ga": GA,
        }
        state = client.post("/online/init", json=init).json()["state"]
        state["schema_version"] = 99
        reply = client.post(
            "/online/assign", json={"state": state, "batch": table(rng, 2, 1, prefix="f")}
        )
        assert reply.status_code == 409
        assert "version" in reply.json()["detail"]


class TestSimulateEndpoint:
    def test_small_run(self, client):
        request = {
            "scenario": "case1",
            "groups": 2,
            "sample_size": 20,
            "replicates": 1,
            "seed": 2,
            "ga": {"population": 10, "elites": 2, "iterations": 5},
        }
        reply = client.post("/simulate", json=request)
        assert reply.status_code == 200
        body = reply.json()
        assert body["schema_version"] == 1
        assert len(body["rows"]) == 8  # 2 methods x 4 metrics
        assert "optimized" in body["summary"]

    def test_unknown_scenario_rejected(self, client):
        reply = client.post("/simulate", json={"scenario": "case9"})
        assert reply.status_code == 422

import pytest

from flux import create_app
from flux.services.sampling import SamplerConfig, candidates


@pytest.fixture
def client():
    app = create_app()
    app.config["TESTING"] = True
    return app.test_client()


def test_flops_endpoint(client):
    response = client.get("/api/flops?tokens=2048")
    assert response.status_code == 200
    body = response.get_json()
    assert body["success"] is True
    assert body["data"]["gflops"] == pytest.approx(82.7, rel=0.01)


def test_flops_rejects_non_integer(client):
    response = client.get("/api/flops?tokens=lots")
    assert response.status_code == 400
    assert response.get_json()["success"] is False


def test_candidates_endpoint(client):
    body = client.post("/api/candidates", json={}).get_json()
    assert body["data"]["count"] == len(candidates(SamplerConfig()))
    assert all(48 <= g["pool"] <= 256 for g in body["data"]["grids"])


def test_candidates_unknown_key(client):
    response = client.post("/api/candidates", json={"f_mx": 3})
    assert response.status_code == 400
    assert "sampler.f_mx" in response.get_json()["error"]


def test_mask_endpoint(client):
    response = client.post("/api/mask", json={"F": 8, "R": 28, "K": 8, "groups": 2, "seed": 3})
    assert response.status_code == 200
    data = response.get_json()["data"]
    assert data["strategy"] == "group_dynamic"
    assert data["mask"]["K"] == 8 and data["mask"]["quotas"] == [4, 4]
    assert data["mask"]["indices"] == sorted(data["mask"]["indices"])
    assert 0.0 <= data["recall"] <= 1.0


@pytest.mark.parametrize(
    "payload",
    [None, {"F": 8, "R": 28}, {"F": 8, "R": 28, "K": 8, "strategy": "magic"}, {"F": 8, "R": 28, "K": 999}],
)
def test_mask_rejects_bad_requests(client, payload):
    response = client.post("/api/mask", json=payload) if payload else client.post("/api/mask")
    assert response.status_code == 400
    assert response.get_json()["success"] is False

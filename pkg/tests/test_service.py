import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from dharq.service.app import create_app

SMALL = {"avg_samples": 20_000, "avg_seed": 11}


@pytest.fixture()
def client(tmp_path):
    app = create_app(str(tmp_path / "eps.json"))
    with TestClient(app) as c:
        yield c


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["cache_entries"] == 0
    assert body["cache_path"].endswith("eps.json")


def test_analyze_contract_and_determinism(client):
    payload = {"snr_db": [5.0, 10.0], "m": [0, 1], **SMALL}
    first = client.post("/analyze", json=payload)
    assert first.status_code == 200
    body = first.json()
    # 2 SNRs x (dharq m=0, dharq m=1, harq, fixed)
    assert len(body["rows"]) == 2 * 4
    assert body["failures"] == []
    again = client.post("/analyze", json=payload).json()
    assert again == body
    assert client.get("/health").json()["cache_entries"] > 0


def test_analyze_validation_errors(client):
    assert client.post("/analyze", json={"snr_db": [10.0], "protocols": []}).status_code == 422
    assert client.post("/analyze", json={"snr_db": [10.0], "m": [2], "L": 2}).status_code == 422
    assert client.post("/analyze", json={"snr_db": [10.0], "k": 0}).status_code == 422
    assert client.post("/analyze", json={"snr_db": []}).status_code == 422
    assert client.post("/analyze", json={"snr_db": [10.0], "m": []}).status_code == 422


def test_simulate_endpoint(client):
    payload = {"snr_db": [10.0], "packets": 30_000, "seed": 2, **SMALL}
    body = client.post("/simulate", json=payload).json()
    assert len(body["rows"]) == 3
    for row in body["rows"]:
        assert row["status"] == "ok"
        assert 0.0 <= row["per_sim"] <= 1.0
        assert row["agree_3sigma"] in ("pass", "fail")


def test_simulate_rejects_warmup_over_packets(client):
    payload = {"snr_db": [10.0], "packets": 500, "warmup": 500, **SMALL}
    assert client.post("/simulate", json=payload).status_code == 422


def test_sweep_rate_endpoint(client):
    payload = {"k_list": [16, 32], "snr_db": 10.0, "protocols": ["dharq", "fixed"], **SMALL}
    body = client.post("/sweep-rate", json=payload).json()
    assert len(body["rows"]) == 4
    assert {row["protocol"] for row in body["rows"]} == {"dharq", "fixed"}


def test_cdf_endpoint(client):
    payload = {
        "snr_db": [10.0], "protocols": ["dharq"], "realizations": 2_000,
        "max_points": 64, "seed": 9, **SMALL,
    }
    body = client.post("/cdf", json=payload).json()
    rows = body["rows"]
    assert len(rows) == 64
    values = [r["value"] for r in rows]
    assert values == sorted(values)
    assert all(0.0 <= v <= 1.0 for v in values)


def test_unknown_protocol_rejected(client):
    resp = client.post("/analyze", json={"snr_db": [10.0], "protocols": ["arq"]})
    assert resp.status_code == 422

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from roadcast.agents import default_thresholds
from roadcast.service.app import ServiceState, create_app
from roadcast.train import prepare_dataset, train_short_term
from conftest import line_network, sinusoid_panel, tiny_config


@pytest.fixture(scope="module")
def client():
    panel = sinusoid_panel(n_nodes=4, days=14, noise=0.5, seed=4)
    network = line_network(4)
    dataset = prepare_dataset(network, panel)
    model, _ = train_short_term(dataset, tiny_config(), epochs=2, seed=0)
    state = ServiceState(
        network=network, panel=panel, dataset=dataset, model=model,
        scaler=dataset.scaler,
        thresholds=default_thresholds(panel.values[:, :dataset.train_end]),
        default_origin=network.node_ids[0],
        estimation_epochs=1,
    )
    return TestClient(create_app(state))


class TestHealthAndNetwork:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"
        assert body["model_loaded"] is True
        assert body["n_nodes"] == 4

    def test_network(self, client):
        body = client.get("/network").json()
        assert body["node_ids"] == ["0", "1", "2", "3"]
        assert {"src": "0", "dst": "1", "distance": 1.0} in body["edges"]

    def test_unloaded_service_returns_503(self):
        empty = TestClient(create_app(ServiceState()))
        assert empty.get("/network").status_code == 503
        assert empty.get("/predict/short", params={"road": "0"}).status_code == 503
        assert empty.get("/health").json()["model_loaded"] is False


class TestPrediction:
    def test_short_default_horizon(self, client):
        body = client.get("/predict/short", params={"road": "1"}).json()
        assert body["road"] == "1"
        assert body["steps"] == 4
        assert len(body["series"]) == 4
        assert all(np.isfinite(body["series"]))

    def test_short_steps_capped_at_horizon(self, client):
        body = client.get("/predict/short", params={"road": "1", "steps": 99}).json()
        assert body["steps"] == 4

    def test_unknown_road_404(self, client):
        assert client.get("/predict/short", params={"road": "nope"}).status_code == 404

    def test_long_covers_requested_days(self, client):
        body = client.get("/predict/long", params={"road": "0", "days": 1}).json()
        assert body["steps"] == 24
        assert len(body["series"]) == 24
        assert all(np.isfinite(body["series"]))

    def test_identical_requests_identical_responses(self, client):
        a = client.get("/predict/short", params={"road": "2"}).json()
        b = client.get("/predict/short", params={"road": "2"}).json()
        assert a == b


class TestRoute:
    def test_end_to_end_path(self, client):
        body = client.get("/route", params={"from": "0", "to": "3"}).json()
        assert body["path"] == ["0", "1", "2", "3"]
        assert body["total_predicted_time"] == pytest.approx(
            sum(body["per_road_time"][r] for r in ["1", "2", "3"]))

    def test_unknown_endpoint_404(self, client):
        assert client.get("/route", params={"from": "0", "to": "zzz"}).status_code == 404


class TestUnseenEndpoint:
    def test_estimate_with_connections(self, client):
        body = client.post("/estimate/unseen", json={
            "connections": [{"node": "1", "distance": 1.0}, {"node": "2", "distance": 1.0}],
            "epochs": 1,
        })
        assert body.status_code == 200
        payload = body.json()
        assert len(payload["selected_nodes"]) > 0
        assert len(payload["estimated_series"]) > 0
        assert set(payload["similarities"]) == {"0", "1", "2", "3"}

    def test_empty_connections_400(self, client):
        assert client.post("/estimate/unseen", json={"connections": []}).status_code == 400

    def test_unknown_connection_404(self, client):
        r = client.post("/estimate/unseen",
                        json={"connections": [{"node": "x", "distance": 1.0}]})
        assert r.status_code == 404


class TestQuery:
    def test_route_demand_from_text(self, client):
        body = client.post("/query", json={"text": "I want to go to Road 3"}).json()
        assert body["demand"]["task"] == "route"
        assert body["route_nodes"] == ["0", "1", "2", "3"]
        assert body["suggestions"][0]["kind"] == "route"
        assert set(body["heatmap"]) == {"0", "1", "2", "3"}

    def test_short_term_text(self, client):
        body = client.post("/query", json={"text": "traffic on Road 2 in 2 hours"}).json()
        assert body["demand"]["task"] == "short_term"
        assert list(body["predictions"]) == ["2"]
        assert len(body["predictions"]["2"]) == 2  # 120 minutes / 60-minute slices

    def test_alert_text(self, client):
        body = client.post("/query", json={"text": "any congestion on Road 1?"}).json()
        assert body["suggestions"][0]["kind"] == "alert"
        assert "windows" in body["suggestions"][0]["payload"]

    def test_long_term_text(self, client):
        body = client.post("/query", json={"text": "forecast Road 1 for 1 day"}).json()
        assert body["demand"]["task"] == "long_term"
        assert len(body["predictions"]["1"]) == 24

    def test_structured_demand_body(self, client):
        body = client.post("/query", json={
            "demand": {"task": "route", "origin": "3", "destination": "0"}}).json()
        assert body["route_nodes"] == ["3", "2", "1", "0"]

    def test_unparseable_text_400_with_clarification(self, client):
        r = client.post("/query", json={"text": "how are you"})
        assert r.status_code == 400
        assert "clarification" in r.json()["detail"]

    def test_missing_text_and_demand_400(self, client):
        assert client.post("/query", json={}).status_code == 400

    def test_unknown_road_in_demand_404(self, client):
        r = client.post("/query", json={"text": "traffic on Road 77"})
        assert r.status_code == 404

    def test_concurrent_queries_agree(self, client):
        def call(_):
            return client.post("/query", json={"text": "traffic on Road 1"})
        with ThreadPoolExecutor(max_workers=8) as pool:
            responses = list(pool.map(call, range(16)))
        assert all(r.status_code == 200 for r in responses)
        first = responses[0].json()
        assert all(r.json() == first for r in responses)


class TestLoadState:
    def test_full_startup_from_files(self, tmp_path):
        import json
        from roadcast.train import save_checkpoint
        panel = sinusoid_panel(n_nodes=3, days=14, seed=5)
        network = line_network(3)
        dataset = prepare_dataset(network, panel)
        model, _ = train_short_term(dataset, tiny_config(n_nodes=3), epochs=0, seed=0)
        ckpt = str(tmp_path / "model.pt")
        save_checkpoint(ckpt, model, dataset.scaler, dataset=dataset)

        net_csv = tmp_path / "network.csv"
        net_csv.write_text("src,dst,distance\n" + "\n".join(
            f"{s},{d},{dist}" for s, d, dist in network.edges))
        series_csv = tmp_path / "series.csv"
        rows = [",".join([nid] + [f"{v:.6f}" for v in panel.values[i]])
                for i, nid in enumerate(network.node_ids)]
        series_csv.write_text("\n".join(rows))
        manifest = tmp_path / "dataset.json"
        manifest.write_text(json.dumps({
            "network": "network.csv", "series": "series.csv",
            "slice_minutes": 60, "q": 24,
            "start_timestamp": "2018-07-02T00:00:00", "units": "km/h",
        }))

        from roadcast.service.app import load_state
        state = load_state(ckpt, str(manifest))
        client = TestClient(create_app(state))
        assert client.get("/health").json()["model_loaded"] is True
        assert client.get("/predict/short", params={"road": "1"}).status_code == 200

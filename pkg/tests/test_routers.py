import pytest
from fastapi.testclient import TestClient

from metalr.main import app

from conftest import tiny_config


@pytest.fixture
def client():
    return TestClient(app)


class TestHealth:
    def test_root(self, client):
        response = client.get("/")
        assert response.status_code == 200
        assert response.json() == {"message": "MetaLR experiment service is running"}


class TestExperimentRoutes:
    def test_run(self, client):
        response = client.post("/experiments/run", json={"config": tiny_config(**{"run.seeds": "0"})})
        assert response.status_code == 200
        body = response.json()
        assert body["scheme"] == "metalr[proportional,separate]"
        assert body["seeds"][0]["passes"] == {"forward": 40, "backward": 40}
        assert body["output_dir"] is None

    def test_run_with_emit(self, client, tmp_path):
        config = tiny_config(**{"run.seeds": "0", "run.out": str(tmp_path)})
        response = client.post("/experiments/run", json={"config": config, "emit": True})
        assert response.status_code == 200
        assert (tmp_path / "report.json").is_file()

    def test_unknown_key_is_400(self, client):
        response = client.post("/experiments/run", json={"config": {"train.bogus": 1}})
        assert response.status_code == 400
        assert response.json()["detail"].startswith("ConfigError: train.bogus")

    def test_alpha0_outside_clamp_is_400(self, client):
        response = client.post("/experiments/run", json={"config": {"scheme.alpha0": 0.5}})
        assert response.status_code == 400
        assert response.json()["detail"].startswith("ConfigError: scheme.alpha0")

    def test_ablate_needs_metalr_base(self, client):
        response = client.post("/experiments/ablate", json={"config": {"scheme.kind": "all_layers"}})
        assert response.status_code == 400

    def test_oracle(self, client):
        response = client.post("/experiments/oracle", json={"config": {"oracle.problem": "convex"}})
        assert response.status_code == 200
        body = response.json()
        assert body["layers"] == ["fc1"]
        assert len(body["losses"]) == 21

    def test_oracle_grid_limit_is_400(self, client):
        response = client.post("/experiments/oracle", json={"config": {"oracle.grid_points": 101}})
        assert response.status_code == 400
        assert response.json()["detail"].startswith("OracleGridError")


class TestReportRoutes:
    def test_compare(self, client, tmp_path):
        config = tiny_config(**{"run.seeds": "0", "run.out": str(tmp_path)})
        client.post("/experiments/run", json={"config": config, "emit": True})
        response = client.post("/reports/compare", json={"reports": [str(tmp_path / "report.json")]})
        assert response.status_code == 200
        rows = response.json()
        assert rows[0]["time_ratio"] == pytest.approx(1.0)

    def test_compare_missing_report_is_400(self, client, tmp_path):
        response = client.post("/reports/compare", json={"reports": [str(tmp_path / "absent.json")]})
        assert response.status_code == 400

    def test_compare_needs_reports(self, client):
        assert client.post("/reports/compare", json={"reports": []}).status_code == 422

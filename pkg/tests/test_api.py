import pytest
from fastapi.testclient import TestClient

from app.main import app
from core.config import settings

client = TestClient(app)


@pytest.fixture
def artifacts(search_run, monkeypatch):
    _, result, out = search_run
    monkeypatch.setattr(settings, "artifacts_dir", out)
    return result


class TestHealth:
    def test_health_check(self):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "healthy"

    def test_root_lists_endpoints(self):
        assert "pareto" in client.get("/").json()["endpoints"]

    def test_readiness_follows_the_artifacts(self, artifacts, tmp_path, monkeypatch):
        assert client.get("/health").json()["artifacts_ready"] is True
        monkeypatch.setattr(settings, "artifacts_dir", tmp_path)
        assert client.get("/health").json()["artifacts_ready"] is False


class TestSearchEndpoints:
    def test_missing_artifacts_dir(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "artifacts_dir", tmp_path / "nothing")
        response = client.get("/api/v1/search/pareto")
        assert response.status_code == 404
        assert "No search artifacts" in response.json()["error"]

    def test_missing_pareto_file(self, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "artifacts_dir", tmp_path)
        assert client.get("/api/v1/search/pareto").status_code == 404
        assert client.get("/api/v1/search/history").status_code == 404

    def test_pareto(self, artifacts):
        body = client.get("/api/v1/search/pareto").json()
        assert body["count"] == len([r for r in artifacts.front if r.finite])
        assert [e["genotype_hash"] for e in body["entries"]] == [r.genotype_hash for r in artifacts.front]

    def test_history(self, artifacts):
        body = client.get("/api/v1/search/history").json()
        assert body["iterations"] == len(artifacts.history)
        assert body["history"][0]["iteration"] == 0

    def test_architecture(self, artifacts):
        record = artifacts.front[0]
        body = client.get(f"/api/v1/search/architectures/{record.genotype_hash}").json()
        assert body["genotype_hash"] == record.genotype_hash
        assert body["param_count"] == record.param_count
        assert body["task"]["horizon"] == 12

    def test_unknown_and_invalid_architecture(self, artifacts):
        assert client.get("/api/v1/search/architectures/abc123").status_code == 404
        assert client.get("/api/v1/search/architectures/not-a-hash").status_code == 400


class TestForecastEndpoint:
    def test_predict_upload(self, artifacts, station_csv):
        record = artifacts.front[0]
        response = client.post(
            "/api/v1/forecast/predict",
            files={"file": ("station.csv", station_csv.read_bytes(), "text/csv")},
            data={"genotype_hash": record.genotype_hash},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["genotype_hash"] == record.genotype_hash
        assert body["windows"] == 37
        assert len(body["rows"]) == 37 * 12

    def test_empty_upload(self, artifacts):
        response = client.post(
            "/api/v1/forecast/predict",
            files={"file": ("station.csv", b"", "text/csv")},
            data={"genotype_hash": artifacts.front[0].genotype_hash},
        )
        assert response.status_code == 400

    def test_missing_form_field(self, artifacts, station_csv):
        response = client.post(
            "/api/v1/forecast/predict",
            files={"file": ("station.csv", station_csv.read_bytes(), "text/csv")},
        )
        assert response.status_code == 422
        assert "genotype_hash" in response.json()["error"]

    def test_bad_csv_is_a_client_error(self, artifacts):
        response = client.post(
            "/api/v1/forecast/predict",
            files={"file": ("station.csv", b"timestamp,power\n2024-01-01T00:00:00,1.0\n", "text/csv")},
            data={"genotype_hash": artifacts.front[0].genotype_hash},
        )
        assert response.status_code == 422

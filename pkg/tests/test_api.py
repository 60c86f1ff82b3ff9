"""
Тесты HTTP API (FastAPI TestClient).
"""
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.neural_verify import network_to_file


@pytest.fixture
def client():
    return TestClient(app)


class TestGeneral:
    def test_root(self, client):
        response = client.get("/")
        assert response.status_code == 200
        assert response.json()["status"] == "OK"

    def test_health(self, client):
        data = client.get("/health").json()
        assert data["status"] == "healthy"
        assert data["inflate_ulps"] == 0


class TestIntervals:
    def test_eval_worked_example(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "(x + 1)^2", "box": [[-1, 1]]})
        assert response.status_code == 200
        data = response.json()
        assert data["intervals"] == ["[0, 4]"]
        assert data["input_names"] == ["x"]
        assert data["monotone"] is True

    def test_eval_infinite_endpoint(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "arctan(x)", "box": [["-inf", "inf"]]})
        assert response.status_code == 200
        assert response.json()["lower"][0] < 0

    def test_eval_syntax_error(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "x ** 0.5", "box": [[0, 1]]})
        assert response.status_code == 400

    def test_eval_complex_constant(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "x + (-8)**(1/3)", "box": [[0, 1]]})
        assert response.status_code == 400

    def test_eval_dimension_mismatch(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "x + y", "box": [[0, 1]]})
        assert response.status_code == 400

    def test_eval_domain_error(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "log(x)", "box": [[-2, -1]]})
        assert response.status_code == 400

    def test_eval_inverted_box(self, client):
        response = client.post("/api/intervals/eval", json={"expression": "x", "box": [[1, 0]]})
        assert response.status_code == 422

    def test_partition(self, client):
        payload = {
            "expression": "x1**2 + 2*x1*x2 + x2**2",
            "box": [[-1, 1], [-1, 1]],
            "k": [4, 4],
            "samples": 200,
        }
        response = client.post("/api/intervals/partition", json=payload)
        assert response.status_code == 200
        data = response.json()
        assert data["cells"] == 16
        assert data["single"] == ["[-2, 4]"]
        assert len(data["oracle"]) == 1

    def test_partition_bad_k(self, client):
        payload = {"expression": "x", "box": [[0, 1]], "k": [0]}
        assert client.post("/api/intervals/partition", json=payload).status_code == 422


class TestNetworks:
    @pytest.mark.parametrize('method', ['ibp', 'crown'])
    def test_bounds(self, client, small_net, method):
        payload = {
            "network": network_to_file(small_net).model_dump(),
            "box": [[-0.1, 0.1]] * 4,
            "method": method,
        }
        response = client.post("/api/networks/bounds", json=payload)
        assert response.status_code == 200
        data = response.json()
        assert len(data["intervals"]) == 2
        assert (data["affine"] is not None) == (method == 'crown')

    def test_bounds_wrong_dimension(self, client, small_net):
        payload = {"network": network_to_file(small_net).model_dump(), "box": [[0, 1]], "method": "ibp"}
        assert client.post("/api/networks/bounds", json=payload).status_code == 400

    def test_bounds_bad_network(self, client):
        payload = {
            "network": {"layers": [{"W": [[1.0]], "b": [0.0], "act": "relu"}]},
            "box": [[0, 1]],
        }
        assert client.post("/api/networks/bounds", json=payload).status_code == 400


class TestReach:
    def test_run_small_scenario(self, client):
        payload = {
            "scenario": {
                "initial_box": [[7.95, 8.05], [7.95, 8.05], [-2.0994, -2.0894], [1.995, 2.005]],
                "t_end": 0.25,
            },
            "mc_trajectories": 10,
        }
        response = client.post("/api/reach/run", json=payload)
        assert response.status_code == 200
        data = response.json()
        assert len(data["times"]) == 6
        assert data["violations"] == 0
        assert "wall_clock_s" not in data["metadata"]

    def test_unknown_system(self, client):
        payload = {"scenario": {"system": "pendulum", "initial_box": [[0, 1]]}, "mc_trajectories": 0}
        assert client.post("/api/reach/run", json=payload).status_code == 400

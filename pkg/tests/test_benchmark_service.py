"""
Тесты бенчмарков: демонстрация разложений, замкнутый контур автомобиля, сценарии и файлы.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from app.core.exceptions import ScenarioConfigError
from app.services.benchmark_service import (
    build_setup,
    default_vehicle_scenario,
    load_scenario,
    run_decomposition_demo,
    run_vehicle_benchmark,
    runtime_stats,
    vehicle_recipe,
    write_benchmark_outputs,
)
from app.services.export_service import read_tube_jsonl
from app.services.inclusion_engine import point_evaluate

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'


class TestVehicleModel:
    def test_straight_line_rates(self):
        f = vehicle_recipe()
        rates = point_evaluate(f, [0.0, 0.0, 0.0, 2.0, 0.5, 0.0])
        assert rates.tolist() == [2.0, 0.0, 0.0, 0.5]

    def test_steering_turns_heading(self):
        f = vehicle_recipe(lf=1.5, lr=1.5)
        rates = point_evaluate(f, [0.0, 0.0, 0.0, 2.0, 0.0, 0.3])
        assert rates[2] > 0.0

    def test_bad_lengths(self):
        with pytest.raises(ScenarioConfigError):
            vehicle_recipe(lf=-1.0, lr=1.0)


class TestScenario:
    def test_load_bundled_scenario(self):
        scenario = load_scenario(str(CONFIGS / 'vehicle_closed_loop.json'))
        assert scenario.system == 'vehicle'
        assert scenario.h == 0.05
        assert scenario.network_dims == [4, 100, 100, 2]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioConfigError):
            load_scenario(str(tmp_path / 'none.json'))

    def test_not_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('nope')
        with pytest.raises(ScenarioConfigError):
            load_scenario(str(path))

    def test_invalid_values(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps({'initial_box': [[0, 1]], 'h': -0.1}))
        with pytest.raises(ScenarioConfigError):
            load_scenario(str(path))

    def test_unknown_system(self):
        with pytest.raises(ScenarioConfigError):
            build_setup(default_vehicle_scenario(system='pendulum'))

    def test_disturbance_rejected_for_vehicle(self):
        with pytest.raises(ScenarioConfigError):
            build_setup(default_vehicle_scenario(disturbance=[[0.0, 0.1]]))


class TestVehicleBenchmark:
    def test_default_scenario_has_no_violations(self):
        result = run_vehicle_benchmark()
        assert len(result.tube.times) == 26
        assert result.report.n_traj == 100
        assert result.report.total_violations == 0
        assert result.plot_data['violations'] == 0
        assert result.stats is None

    def test_partitioned_scenario(self):
        scenario = default_vehicle_scenario(partition=[2, 1, 1, 1], t_end=0.5, mc_trajectories=50)
        result = run_vehicle_benchmark(scenario)
        assert result.tube.metadata['cells'] == 2
        assert result.report.total_violations == 0

    def test_outputs_are_reproducible(self, tmp_path):
        """Два запуска с одним seed дают побитово одинаковые файлы"""
        scenario = default_vehicle_scenario(mc_trajectories=20, t_end=0.5)
        first = write_benchmark_outputs(run_vehicle_benchmark(scenario), scenario, str(tmp_path / 'a'))
        second = write_benchmark_outputs(run_vehicle_benchmark(scenario), scenario, str(tmp_path / 'b'))
        assert [p.name for p in first] == ['tube.jsonl', 'tube.csv', 'mc_report.json', 'plot_data.json']
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_tube_file_round_trip(self, tmp_path):
        scenario = default_vehicle_scenario(mc_trajectories=0, t_end=0.25)
        result = run_vehicle_benchmark(scenario)
        write_benchmark_outputs(result, scenario, str(tmp_path))
        tube = read_tube_jsonl(tmp_path / 'tube.jsonl')
        assert np.array_equal(tube.lower, result.tube.lower)
        assert np.array_equal(tube.upper, result.tube.upper)
        assert result.min_speed is None

    def test_runtime_stats(self):
        stats = runtime_stats(lambda: None, 3)
        assert stats['repeats'] == 3
        assert stats['mean_s'] >= 0.0
        assert runtime_stats(lambda: None, 0)['mean_s'] == 0.0


class TestDecompositionDemo:
    def test_all_contained(self):
        data = run_decomposition_demo(k=(8, 8), n_samples=500, seed=0)
        assert data['all_contained']
        assert len(data['decompositions']['A']['cells']) == 64
        assert len(data['sample_images']) == 500

    def test_decomposition_b_is_wider(self):
        data = run_decomposition_demo(k=(4, 4), n_samples=100, seed=1)
        a = np.array(data['decompositions']['A']['single'], dtype=float)
        b = np.array(data['decompositions']['B']['single'], dtype=float)
        assert (b[:, 1] - b[:, 0] >= a[:, 1] - a[:, 0]).all()

"""
Тесты систем вложения, интегрирования Эйлером и проверки Монте-Карло.
"""
import dataclasses
import math

import numpy as np
import pytest

from app.core.exceptions import (
    EmbeddingInstabilityError,
    NonFiniteRateError,
    ScenarioConfigError,
    ShapeMismatchError,
)
from app.services.expression_service import parse_recipe
from app.services.interval_tensor import Box
from app.services.neural_verify import (
    AffineBoundPair,
    FeedForwardNetwork,
    Layer,
    crown_bounds,
    forward,
    generate_random_network,
    ibp_bounds,
    localized_incl,
)
from app.services.reach_engine import (
    ClosedLoopSetup,
    OpenLoopSystem,
    closed_embedding_rhs,
    euler_reach,
    held_control,
    mc_check,
    mc_check_open,
    open_embedding_rhs,
    open_reach_with_global_u,
    partitioned_reach,
    steps_per_period,
    time_grid,
)
from tests.conftest import linear_system


U_BOX = Box([-0.1], [0.1])
X0 = Box([0.9], [1.1])
NO_W = Box(np.empty(0), np.empty(0))


def _analytic_envelope(a: float, t: np.ndarray):
    """Точная огибающая ẋ = a·x + u при x0 ∈ [0.9, 1.1], u ∈ [-0.1, 0.1]"""
    if a == 0.0:
        return 0.9 - 0.1 * t, 1.1 + 0.1 * t
    growth = np.exp(a * t)
    drift = 0.1 * (growth - 1.0) / a
    return 0.9 * growth - drift, 1.1 * growth + drift


class TestTimeGrid:
    def test_grid(self):
        grid = time_grid(0.0, 1.25, 0.05)
        assert len(grid) == 26
        assert grid[0] == 0.0
        assert grid[-1] == pytest.approx(1.25)

    @pytest.mark.parametrize('t0,t_end,h', [(0.0, 1.0, 0.0), (1.0, 1.0, 0.1), (0.0, 1.0, 0.3)])
    def test_bad_grid(self, t0, t_end, h):
        with pytest.raises(ScenarioConfigError):
            time_grid(t0, t_end, h)

    def test_steps_per_period(self):
        assert steps_per_period(0.25, 0.05) == 5
        with pytest.raises(ScenarioConfigError):
            steps_per_period(0.1, 0.03)


class TestOpenEmbedding:
    def test_face_rates(self):
        sys = linear_system(1.0)
        lo, hi = open_embedding_rhs(sys, Box([0.0], [1.0]), Box([0.0], [0.0]), Box(np.empty(0), np.empty(0)))
        assert lo.tolist() == [0.0]
        assert hi.tolist() == [1.0]

    def test_dimension_check(self):
        with pytest.raises(ShapeMismatchError):
            open_embedding_rhs(linear_system(1.0), Box([0.0, 0.0], [1.0, 1.0]), U_BOX,
                               Box(np.empty(0), np.empty(0)))

    def test_system_signature_checked(self):
        with pytest.raises(ShapeMismatchError):
            OpenLoopSystem(n=2, p=1, q=0, f=parse_recipe("x + u", ['x', 'u']))

    @pytest.mark.parametrize('a', [-1.0, 0.0, 1.0])
    def test_linear_tube_vs_analytic(self, a):
        """Трубка Эйлера близка к точной огибающей и содержит все траектории"""
        sys = linear_system(a)
        tube = open_reach_with_global_u(sys, X0, U_BOX, 0.0, 1.0, 0.01)
        assert len(tube.times) == 101
        lower, upper = _analytic_envelope(a, tube.times)
        assert np.abs(tube.lower[:, 0] - lower).max() <= 0.05
        assert np.abs(tube.upper[:, 0] - upper).max() <= 0.05
        report = mc_check_open(sys, X0, U_BOX, 200, 0, tube)
        assert report.total_violations == 0
        assert len(report.violations_per_step) == 101

    def test_tube_is_deterministic(self):
        sys = linear_system(-1.0)
        a = euler_reach(sys, X0, 0.0, 1.0, 0.01, u_schedule=U_BOX)
        b = euler_reach(sys, X0, 0.0, 1.0, 0.01, u_schedule=U_BOX)
        assert np.array_equal(a.lower, b.lower)
        assert np.array_equal(a.upper, b.upper)

    def test_time_varying_control(self):
        sys = linear_system(0.0)
        tube = euler_reach(sys, X0, 0.0, 1.0, 0.5, u_schedule=lambda t: Box([t], [t]))
        assert tube.lower[:, 0].tolist() == [0.9, 0.9, 0.9 + 0.25]

    def test_missing_control_schedule(self):
        with pytest.raises(ScenarioConfigError):
            euler_reach(linear_system(1.0), X0, 0.0, 1.0, 0.1)

    def test_tan_pole_aborts(self):
        f = parse_recipe("tan(x2) + u; 0 * x1", ['x1', 'x2', 'u'])
        sys = OpenLoopSystem(n=2, p=1, q=0, f=f)
        with pytest.raises(NonFiniteRateError) as exc:
            euler_reach(sys, Box([0.0, 1.0], [1.0, 2.0]), 0.0, 1.0, 0.1, u_schedule=Box([0.0], [0.0]))
        assert exc.value.time == 0.0

    def test_unstable_step_aborts(self):
        sys = linear_system(-100.0)
        with pytest.raises(EmbeddingInstabilityError):
            euler_reach(sys, Box([0.0], [1.0]), 0.0, 0.1, 0.05, u_schedule=Box([0.0], [0.0]))

    def test_unbounded_initial_box(self):
        with pytest.raises(ScenarioConfigError):
            euler_reach(linear_system(1.0), Box([0.0], [math.inf]), 0.0, 1.0, 0.1, u_schedule=U_BOX)


class TestTube:
    def test_tube_helpers(self):
        tube = euler_reach(linear_system(0.0), X0, 0.0, 0.2, 0.1, u_schedule=U_BOX)
        assert tube.n_steps == 2 and tube.dim == 1
        assert tube.box(0) == X0
        records = tube.to_records()
        assert records[0] == {'t': 0.0, 'lower': [0.9], 'upper': [1.1]}
        states = np.array([[[1.0]], [[1.0]], [[5.0]]])
        assert tube.contains(states)[:, 0].tolist() == [True, True, False]

    def test_metadata_has_no_control_for_open_loop(self):
        tube = euler_reach(linear_system(0.0), X0, 0.0, 0.2, 0.1, u_schedule=U_BOX, seed=5)
        assert tube.metadata['mode'] == 'open'
        assert tube.metadata['control_instants'] == []
        assert tube.metadata['seed'] == 5


class TestPartitionedReach:
    def test_partition_hull_within_single_tube(self):
        sys = linear_system(-1.0)
        single = euler_reach(sys, X0, 0.0, 1.0, 0.05, u_schedule=U_BOX)
        hull, cells = partitioned_reach(sys, X0, [4], 0.0, 1.0, 0.05, max_workers=1, u_schedule=U_BOX)
        assert len(cells) == 4
        assert hull.metadata['cells'] == 4
        assert (hull.lower >= single.lower - 1e-12).all()
        assert (hull.upper <= single.upper + 1e-12).all()

    def test_threaded_matches_serial(self):
        sys = linear_system(1.0)
        serial, _ = partitioned_reach(sys, X0, [3], 0.0, 0.5, 0.05, max_workers=1, u_schedule=U_BOX)
        threaded, _ = partitioned_reach(sys, X0, [3], 0.0, 0.5, 0.05, max_workers=3, u_schedule=U_BOX)
        assert np.array_equal(serial.lower, threaded.lower)
        assert np.array_equal(serial.upper, threaded.upper)


class TestClosedLoop:
    def test_setup_validation(self, small_net):
        from app.services.benchmark_service import vehicle_system
        sys = vehicle_system()
        with pytest.raises(ShapeMismatchError):
            ClosedLoopSetup(system=sys, controller=generate_random_network([3, 8, 2]), control_period=0.25)
        with pytest.raises(ScenarioConfigError):
            ClosedLoopSetup(system=sys, controller=small_net, control_period=0.0)
        with pytest.raises(ScenarioConfigError):
            ClosedLoopSetup(system=sys, controller=small_net, control_period=0.25, nn_bound_method='deeppoly')
        with pytest.raises(ScenarioConfigError):
            ClosedLoopSetup(system=sys, controller=small_net, control_period=0.25, interconnection='continuous')

    def test_held_control_contains_outputs(self, vehicle_setup, vehicle_box, rng):
        u = held_control(vehicle_setup, vehicle_box)
        pts = vehicle_box.lower + vehicle_box.width() * rng.random((500, 4))
        assert u.contains_points(forward(vehicle_setup.controller, pts)).all()

    def test_vehicle_held_tube_contains_trajectories(self, vehicle_setup, vehicle_box):
        """Замкнутый контур автомобиля: 26 моментов, 100 траекторий, ноль нарушений"""
        tube = euler_reach(vehicle_setup, vehicle_box, 0.0, 1.25, 0.05, seed=0)
        assert len(tube.times) == 26
        assert tube.metadata['control_instants'] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
        assert tube.metadata['bound_refreshes'] == 5
        report = mc_check(vehicle_setup, vehicle_box, 100, 0, tube)
        assert report.n_traj == 100
        assert report.total_violations == 0
        assert report.states.shape == (26, 100, 4)

    def test_ibp_global_is_wider(self, vehicle_setup, vehicle_box):
        crown = euler_reach(vehicle_setup, vehicle_box, 0.0, 0.5, 0.05)
        ibp_setup = dataclasses.replace(vehicle_setup, nn_bound_method='ibp_global')
        ibp = euler_reach(ibp_setup, vehicle_box, 0.0, 0.5, 0.05)
        assert (ibp.upper[-1] - ibp.lower[-1] >= crown.upper[-1] - crown.lower[-1] - 1e-12).all()

    @pytest.mark.parametrize('method', ['crown_localized', 'ibp_global'])
    def test_hybrid_runs(self, vehicle_setup, vehicle_box, method):
        setup = dataclasses.replace(vehicle_setup, interconnection='hybrid', nn_bound_method=method)
        tube = euler_reach(setup, vehicle_box, 0.0, 0.5, 0.05)
        assert len(tube.times) == 11
        assert (tube.lower <= tube.upper).all()
        assert isinstance(tube.metadata['fallback_events'], list)
        if method == 'ibp_global':
            assert tube.metadata['fallback_events'] == []

    def test_zero_trajectories(self, vehicle_setup, vehicle_box):
        tube = euler_reach(vehicle_setup, vehicle_box, 0.0, 0.25, 0.05)
        report = mc_check(vehicle_setup, vehicle_box, 0, 0, tube)
        assert report.total_violations == 0
        assert report.min_margin is None

    def test_mc_is_reproducible(self, vehicle_setup, vehicle_box):
        tube = euler_reach(vehicle_setup, vehicle_box, 0.0, 0.25, 0.05)
        a = mc_check(vehicle_setup, vehicle_box, 10, 3, tube)
        b = mc_check(vehicle_setup, vehicle_box, 10, 3, tube)
        assert np.array_equal(a.states, b.states)
        assert a.to_dict() == b.to_dict()

    def test_held_control_is_crown_ibp_intersection(self, vehicle_setup, vehicle_box):
        u = held_control(vehicle_setup, vehicle_box)
        ibp = ibp_bounds(vehicle_setup.controller, vehicle_box)
        crown = localized_incl(crown_bounds(vehicle_setup.controller, vehicle_box), vehicle_box)
        assert np.array_equal(u.lower, np.maximum(crown.lower, ibp.lower))
        assert np.array_equal(u.upper, np.minimum(crown.upper, ibp.upper))
        assert u.subset(ibp)

    def test_hybrid_fallback_once_per_period(self, vehicle_setup, vehicle_box):
        """Бокс сдвигается за шаг, поэтому IBP включается на первом шаге каждого периода"""
        setup = dataclasses.replace(vehicle_setup, interconnection='hybrid')
        tube = euler_reach(setup, vehicle_box, 0.0, 0.5, 0.05)
        events = tube.metadata['fallback_events']
        assert [e['reason'] for e in events] == ['localization', 'localization']
        assert [e['t'] for e in events] == pytest.approx([0.05, 0.3])
        assert tube.metadata['control_instants'] == pytest.approx([0.0, 0.25])


def _toy_system() -> OpenLoopSystem:
    """ẋ1 = x2 + u, ẋ2 = -x1·x2 + u"""
    f = parse_recipe("x2 + u; -x1 * x2 + u", ['x1', 'x2', 'u'], name='toy')
    return OpenLoopSystem(n=2, p=1, q=0, f=f)


def _fuzzed_setup(seed: int, method: str = 'crown_localized'):
    """Случайная система с двумя состояниями, сеть 2 -> 16 -> 1 и бокс ширины 0.1"""
    rng = np.random.Generator(np.random.PCG64(seed))
    a = [float(v) for v in rng.uniform(-1.0, 1.0, size=5)]
    f = parse_recipe(
        f"{a[0]!r}*x1 + {a[1]!r}*sin(x2) + u; {a[2]!r}*x2 + {a[3]!r}*x1*x2 + {a[4]!r}*u",
        ['x1', 'x2', 'u'],
    )
    sys = OpenLoopSystem(n=2, p=1, q=0, f=f, name=f'fuzz-{seed}')
    net = generate_random_network([2, 16, 1], seed=seed)
    setup = ClosedLoopSetup(system=sys, controller=net, control_period=0.25, nn_bound_method=method)
    center = rng.uniform(-1.0, 1.0, size=2)
    return setup, Box(center - 0.05, center + 0.05), rng


class TestClosedEmbedding:
    @pytest.mark.parametrize('use_crown', [True, False])
    def test_constant_controller_matches_open_embedding(self, vehicle_setup, vehicle_box, use_crown):
        c = np.array([0.3, -0.2])
        net = FeedForwardNetwork([Layer(np.zeros((2, 4)), c, 'identity')])
        setup = dataclasses.replace(vehicle_setup, controller=net)
        bounds = crown_bounds(net, vehicle_box) if use_crown else None
        closed = closed_embedding_rhs(setup, vehicle_box, NO_W, bounds)
        opened = open_embedding_rhs(setup.system, vehicle_box, Box(c, c), NO_W)
        assert np.array_equal(closed[0], opened[0])
        assert np.array_equal(closed[1], opened[1])

    def test_identity_bounds_give_box_corners(self):
        """ẋ = u, u = x: нижняя скорость - x̲, верхняя - x̄"""
        f = parse_recipe("u1 + 0 * x1; u2 + 0 * x2", ['x1', 'x2', 'u1', 'u2'])
        sys = OpenLoopSystem(n=2, p=2, q=0, f=f)
        net = FeedForwardNetwork([Layer(np.eye(2), np.zeros(2), 'identity')])
        setup = ClosedLoopSetup(system=sys, controller=net, control_period=0.1)
        x = Box([-1.0, 2.0], [0.5, 3.0])
        bounds = AffineBoundPair(C_lower=np.eye(2), d_lower=np.zeros(2),
                                 C_upper=np.eye(2), d_upper=np.zeros(2), region=x)
        lo, hi = closed_embedding_rhs(setup, x, NO_W, bounds)
        assert lo.tolist() == [-1.0, 2.0]
        assert hi.tolist() == [0.5, 3.0]

    def test_rates_bound_face_samples(self):
        """Скорости на гранях, перебранные по сетке, лежат между нижней и верхней скоростью"""
        sys = _toy_system()
        net = generate_random_network([2, 8, 1], seed=3)
        setup = ClosedLoopSetup(system=sys, controller=net, control_period=0.1)
        x = Box([0.1, -0.2], [0.3, 0.2])
        lo, hi = closed_embedding_rhs(setup, x, NO_W, crown_bounds(net, x))
        assert np.isfinite(lo).all() and np.isfinite(hi).all()
        grid = np.linspace(0.0, 1.0, 41)
        for i in range(2):
            j = 1 - i
            for fixed, is_lower in ((x.lower[i], True), (x.upper[i], False)):
                pts = np.empty((len(grid), 2))
                pts[:, i] = fixed
                pts[:, j] = x.lower[j] + (x.upper[j] - x.lower[j]) * grid
                rates = sys.rates(pts, forward(net, pts), np.empty(0))[:, i]
                if is_lower:
                    assert lo[i] <= rates.min() + 1e-9
                else:
                    assert hi[i] >= rates.max() - 1e-9

    def test_localization_fallback(self):
        sys = _toy_system()
        net = generate_random_network([2, 8, 1], seed=3)
        setup = ClosedLoopSetup(system=sys, controller=net, control_period=0.1)
        x = Box([0.1, -0.2], [0.3, 0.2])
        bounds = crown_bounds(net, Box([0.15, -0.1], [0.25, 0.1]))
        events = []
        lo, hi = closed_embedding_rhs(setup, x, NO_W, bounds, t=0.5, events=events)
        assert events == [{'t': 0.5, 'reason': 'localization'}]
        ibp_lo, ibp_hi = closed_embedding_rhs(setup, x, NO_W, None)
        assert np.array_equal(lo, ibp_lo)
        assert np.array_equal(hi, ibp_hi)


class TestReachProperties:
    def test_point_box_gives_point_trajectory(self, vehicle_setup, vehicle_box):
        """Вырожденный начальный бокс: трубка совпадает с точечной траекторией Эйлера побитово"""
        point = vehicle_box.midpoint()
        x0 = Box(point, point)
        tube = euler_reach(vehicle_setup, x0, 0.0, 1.25, 0.05)
        report = mc_check(vehicle_setup, x0, 1, 0, tube)
        assert np.array_equal(tube.lower, tube.upper)
        assert np.array_equal(tube.lower, report.states[:, 0, :])

    def test_point_box_open_loop(self):
        sys = linear_system(-1.0)
        x0 = Box([1.0], [1.0])
        u = Box([0.05], [0.05])
        tube = open_reach_with_global_u(sys, x0, u, 0.0, 1.0, 0.1)
        report = mc_check_open(sys, x0, u, 1, 0, tube)
        assert np.array_equal(tube.lower, report.states[:, 0, :])
        assert np.array_equal(tube.upper, report.states[:, 0, :])

    @pytest.mark.parametrize('seed', range(10))
    def test_fuzzed_tubes_contain_trajectories(self, seed):
        setup, x0, _ = _fuzzed_setup(seed)
        tube = euler_reach(setup, x0, 0.0, 1.0, 0.05)
        report = mc_check(setup, x0, 100, seed, tube)
        assert report.total_violations == 0

    @pytest.mark.parametrize('seed', range(10))
    def test_fuzzed_tubes_are_nested(self, seed):
        """Вложенные начальные боксы дают вложенные трубки (IBP монотонна по включению)"""
        setup, outer, rng = _fuzzed_setup(seed, 'ibp_global')
        w = outer.width()
        r = rng.random(4)
        inner = Box(outer.lower + 0.4 * w * r[:2], outer.upper - 0.4 * w * r[2:])
        big = euler_reach(setup, outer, 0.0, 1.0, 0.05)
        small = euler_reach(setup, inner, 0.0, 1.0, 0.05)
        assert (big.lower <= small.lower + 1e-12).all()
        assert (small.upper <= big.upper + 1e-12).all()

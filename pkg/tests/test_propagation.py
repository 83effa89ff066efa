import numpy as np
import pytest

from radioloc.errors import InputError
from radioloc.floorplan import (
    Bounds,
    Floorplan,
    ObstacleFamily,
    ObstructionCount,
    PlanarObstacle,
    Point3,
)
from radioloc.propagation import (
    AccessPoint,
    ModelKind,
    PropagationParams,
    additional_loss,
    aps_from_list,
    load_access_points,
    load_params,
    path_loss,
    path_loss_os,
    predict_rss,
    predict_rss_many,
    save_access_points,
    save_params,
)

WALL = ObstacleFamily.WALL
DOOR = ObstacleFamily.DOOR


class TestPathLossOs:
    def test_reference_distance(self):
        params = PropagationParams(gamma=2.0, l0_db=40.22)
        assert path_loss_os(params, 1.0) == pytest.approx(40.22)

    def test_one_decade(self):
        params = PropagationParams(gamma=2.0, l0_db=40.22)
        assert path_loss_os(params, 10.0) == pytest.approx(60.22)

    def test_two_decades_gamma3(self):
        params = PropagationParams(gamma=3.0, l0_db=40.0)
        assert path_loss_os(params, 100.0) == pytest.approx(100.0)

    def test_nonpositive_distance_rejected(self):
        params = PropagationParams()
        for d in (0.0, -1.0):
            with pytest.raises(ValueError):
                path_loss_os(params, d)

    def test_strictly_increasing_in_distance(self):
        params = PropagationParams(gamma=2.4)
        ds = np.linspace(0.5, 60.0, 200)
        losses = [path_loss_os(params, d) for d in ds]
        assert all(b > a for a, b in zip(losses, losses[1:]))


class TestAdditionalLoss:
    def test_linear_sum(self):
        params = PropagationParams.simple(gamma=2, lc_db=2.0, wall_db=5.0, door_db=1.0)
        obs = ObstructionCount(counts={(WALL, 1): 3, (DOOR, 1): 1}, floors_crossed=0)
        assert additional_loss(params, obs) == pytest.approx(18.0)

    def test_single_floor_term_independent_of_b(self):
        obs = ObstructionCount(counts={}, floors_crossed=1)
        for b in (0.0, 0.46, 1.3):
            params = PropagationParams(lf_db=18.0, b=b)
            assert additional_loss(params, obs) == pytest.approx(18.0)

    def test_empty_link_zero(self):
        params = PropagationParams(lc_db=0.0)
        obs = ObstructionCount(counts={(WALL, 1): 0}, floors_crossed=0)
        assert additional_loss(params, obs) == 0.0

    def test_no_floor_crossing_no_floor_term(self):
        params = PropagationParams(lc_db=0.5, lf_db=18.0)
        obs = ObstructionCount(counts={}, floors_crossed=0)
        assert additional_loss(params, obs) == pytest.approx(0.5)

    def test_unparameterized_type_contributes_nothing(self):
        params = PropagationParams(lc_db=0.0, loss_2d={})
        obs = ObstructionCount(counts={(WALL, 1): 4}, floors_crossed=0)
        assert additional_loss(params, obs) == 0.0


def walled_plan():
    return Floorplan(
        bounds=Bounds(0, 0, 30, 10),
        obstacles=(PlanarObstacle(10, 0, 10, 10, family=WALL),
                   PlanarObstacle(20, 0, 20, 10, family=WALL)))


class TestPathLoss:
    def test_mwmf_without_obstacles_equals_os(self):
        plan = Floorplan(bounds=Bounds(0, 0, 30, 10))
        params = PropagationParams.simple(gamma=2.6, lc_db=0.0, wall_db=5.0)
        tx, rx = Point3(1, 5, 2), Point3(25, 5, 2)
        assert path_loss(ModelKind.MWMF, params, plan, tx, rx) == pytest.approx(
            path_loss(ModelKind.ONE_SLOPE, params, plan, tx, rx))

    def test_decomposition(self):
        plan = walled_plan()
        params = PropagationParams.simple(gamma=2.6, lc_db=1.0, wall_db=6.0)
        rng = np.random.default_rng(3)
        for _ in range(25):
            tx = Point3(float(rng.uniform(0.5, 29.5)), float(rng.uniform(0.5, 9.5)), 2.0)
            rx = Point3(float(rng.uniform(0.5, 29.5)), float(rng.uniform(0.5, 9.5)), 1.2)
            if tx == rx:
                continue
            from radioloc.floorplan import count_obstructions

            extra = additional_loss(params, count_obstructions(plan, tx, rx))
            assert path_loss(ModelKind.MWMF, params, plan, tx, rx) == pytest.approx(
                path_loss(ModelKind.ONE_SLOPE, params, plan, tx, rx) + extra)

    def test_hand_evaluated_link(self):
        # 10 m link crossing two 6 dB walls with 1 dB constant loss.
        plan = Floorplan(
            bounds=Bounds(0, 0, 12, 6),
            obstacles=(PlanarObstacle(4, 0, 4, 6, family=WALL),
                       PlanarObstacle(7, 0, 7, 6, family=WALL)))
        params = PropagationParams.simple(gamma=2.0, lc_db=1.0, wall_db=6.0,
                                          l0_db=40.22)
        pl = path_loss(ModelKind.MWMF, params, plan, Point3(1, 3, 1.5),
                       Point3(11, 3, 1.5))
        assert pl == pytest.approx(73.22)


class TestPredictRss:
    def test_eirp_minus_loss(self):
        plan = Floorplan(bounds=Bounds(0, 0, 30, 10))
        ap = AccessPoint("ap", Point3(1, 5, 2), eirp_dbm=20.0)
        params = PropagationParams(gamma=2.0, l0_db=40.22)
        # 10 m one-slope link: loss 60.22 dB.
        assert predict_rss(ModelKind.ONE_SLOPE, params, plan, ap,
                           Point3(11, 5, 2)) == pytest.approx(-40.22)

    def test_free_space_one_meter(self):
        plan = Floorplan(bounds=Bounds(0, 0, 30, 10))
        ap = AccessPoint("ap", Point3(5, 5, 2), eirp_dbm=20.0)
        params = PropagationParams(gamma=2.0, l0_db=40.22)
        assert predict_rss(ModelKind.MWMF, params, plan, ap,
                           Point3(6, 5, 2)) == pytest.approx(-20.22)

    def test_wall_loss_linearity(self):
        plan = walled_plan()
        ap = AccessPoint("ap", Point3(1, 5, 2), eirp_dbm=20.0)
        rx = Point3(25, 5, 1.2)  # crosses both walls
        base = PropagationParams.simple(gamma=2.5, lc_db=1.0, wall_db=4.0)
        doubled = PropagationParams.simple(gamma=2.5, lc_db=1.0, wall_db=8.0)
        drop = (predict_rss(ModelKind.MWMF, base, plan, ap, rx)
                - predict_rss(ModelKind.MWMF, doubled, plan, ap, rx))
        assert drop == pytest.approx(2 * 4.0)

    def test_batch_matches_scalar(self):
        plan = walled_plan()
        ap = AccessPoint("ap", Point3(2, 3, 2.5), eirp_dbm=20.0)
        params = PropagationParams.simple(gamma=2.7, lc_db=1.5, wall_db=5.0)
        rng = np.random.default_rng(5)
        points = [Point3(float(rng.uniform(0.5, 29.5)), float(rng.uniform(0.5, 9.5)), 1.2)
                  for _ in range(40)]
        batch = predict_rss_many(ModelKind.MWMF, params, plan, ap, points)
        for p, value in zip(points, batch):
            assert value == pytest.approx(
                predict_rss(ModelKind.MWMF, params, plan, ap, p), abs=1e-12)

    def test_rx_at_ap_rejected(self):
        plan = walled_plan()
        ap = AccessPoint("ap", Point3(2, 3, 2.5))
        with pytest.raises(ValueError):
            predict_rss_many(ModelKind.ONE_SLOPE, PropagationParams(), plan, ap,
                             [ap.position])


class TestParamsValidation:
    def test_nonpositive_l0_rejected(self):
        with pytest.raises(ValueError):
            PropagationParams(l0_db=0.0)

    def test_negative_loss_warns_not_raises(self):
        with pytest.warns(UserWarning):
            params = PropagationParams.simple(gamma=2.0, wall_db=-1.0)
        assert params.wall_loss_db == -1.0


class TestSerialization:
    def test_params_round_trip(self, tmp_path):
        params = PropagationParams.simple(gamma=2.9, lc_db=1.2, wall_db=5.5,
                                          door_db=1.1, lf_db=17.0, b=0.5)
        path = tmp_path / "params.json"
        save_params(ModelKind.MWMF, params, path)
        model, loaded = load_params(path)
        assert model is ModelKind.MWMF
        assert loaded == params

    def test_params_schema(self, tmp_path):
        import json

        path = tmp_path / "params.json"
        save_params(ModelKind.ONE_SLOPE, PropagationParams(), path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"model", "l0_db", "gamma", "lc_db", "losses", "lf_db", "b"}
        assert set(doc["losses"]) == {"wall", "door"}

    def test_aps_round_trip(self, tmp_path):
        aps = [AccessPoint("ap01", Point3(1, 2, 2.8), 20.0),
               AccessPoint("ap02", Point3(5, 2, 2.8), 18.0)]
        path = tmp_path / "aps.json"
        save_access_points(aps, path)
        assert load_access_points(path) == aps

    def test_duplicate_ap_ids_rejected(self):
        with pytest.raises(InputError):
            aps_from_list([{"id": "a", "x": 0, "y": 0, "z": 1},
                           {"id": "a", "x": 1, "y": 0, "z": 1}])

    def test_bad_params_file(self, tmp_path):
        path = tmp_path / "params.json"
        path.write_text("[1, 2]")
        with pytest.raises(InputError):
            load_params(path)

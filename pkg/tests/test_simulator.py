import json

import numpy as np
import pytest

from radioloc.errors import GeometryError, InputError
from radioloc.fitting import FitStrategy, fit
from radioloc.floorplan import ObstacleFamily, Point3
from radioloc.positioning import WknnConfig, locate
from radioloc.propagation import ModelKind
from radioloc.radiomap import (
    Radiomap,
    build_real_fingerprints,
    generate_virtual_fingerprints,
)
from radioloc.simulator import (
    NoiseConfig,
    ScenarioPreset,
    WorldSpec,
    grid_rp_positions,
    make_world,
    preset_by_name,
    simulate_campaign,
    template_info,
    template_test_positions,
)


class TestTemplates:
    def test_spinv_like_shape(self):
        world = make_world("spinv_like", 3)
        assert world.plan.area == pytest.approx(504.0)
        assert len(world.aps) == 7
        assert all(ap.eirp_dbm == 20.0 for ap in world.aps)

    def test_twist_like_shape(self):
        world = make_world("twist_like", 3)
        assert world.plan.area == pytest.approx(450.0)
        assert len(world.aps) == 4

    def test_same_seed_same_world(self):
        a = make_world("spinv_like", 11)
        b = make_world("spinv_like", 11)
        assert a.plan == b.plan
        assert a.aps == b.aps
        assert a.truth_for("ap01") == b.truth_for("ap01")
        np.testing.assert_array_equal(a.obstacle_loss_offsets_db,
                                      b.obstacle_loss_offsets_db)

    def test_different_seeds_differ(self):
        assert make_world("spinv_like", 1).plan != make_world("spinv_like", 2).plan

    def test_walls_and_doors_present(self):
        world = make_world("spinv_like", 5)
        families = {o.family for o in world.plan.obstacles}
        assert families == {ObstacleFamily.WALL, ObstacleFamily.DOOR}

    def test_template_info_grids(self):
        info = template_info("spinv_like")
        assert info.n_rp_grid == (8, 15, 36, 72)
        assert info.dv_grid == (0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0)
        assert template_info("twist_like").n_rp_grid == (5, 9, 21, 41)

    def test_unknown_template(self):
        with pytest.raises(ValueError):
            make_world("nonexistent", 0)

    def test_custom_template(self, tmp_path):
        doc = {
            "floorplan": {"bounds": {"min_x": 0, "min_y": 0, "max_x": 20,
                                     "max_y": 10},
                          "floors": [], "obstacles": []},
            "aps": [{"id": "x", "x": 5, "y": 5, "z": 2.8, "eirp_dbm": 20}],
            "truth_params": {"model": "mwmf", "gamma": 2.5, "l0_db": 40.22,
                             "lc_db": 1.0, "losses": {"wall": 5, "door": 1},
                             "lf_db": 18, "b": 0.46},
        }
        path = tmp_path / "world.json"
        path.write_text(json.dumps(doc))
        world = make_world("custom", 7, custom_file=path)
        assert world.plan.area == 200.0
        assert world.truth_for("x").gamma == 2.5
        with pytest.raises(InputError):
            make_world("custom", 7, custom_file=tmp_path / "missing.json")

    def test_ap_outside_bounds_rejected(self):
        world = make_world("spinv_like", 1)
        from radioloc.propagation import AccessPoint

        bad = [AccessPoint("far", Point3(1000.0, 0.0, 2.8))]
        with pytest.raises(GeometryError):
            WorldSpec(plan=world.plan, aps=bad, truth={"far": world.truth_for("ap01")},
                      noise=NoiseConfig.none())


class TestGridPositions:
    def test_published_counts(self):
        spinv = make_world("spinv_like", 1)
        info = template_info("spinv_like")
        assert len(grid_rp_positions(spinv.plan, info.dr_max)) == 72
        twist = make_world("twist_like", 1)
        assert len(grid_rp_positions(twist.plan, template_info("twist_like").dr_max)) == 41

    def test_density_one_point(self):
        world = make_world("twist_like", 1)
        pts = grid_rp_positions(world.plan, 1.0 / world.plan.area)
        assert len(pts) == 1
        assert (pts[0].x, pts[0].y) == world.plan.bounds.center

    def test_nonpositive_density(self):
        world = make_world("twist_like", 1)
        with pytest.raises(ValueError):
            grid_rp_positions(world.plan, 0.0)


class TestPresets:
    def test_controlled(self):
        preset = ScenarioPreset.controlled()
        assert preset.q == 50 and preset.tp_scans == 50
        assert preset.device_bias_sigma_db == 0.0

    def test_crowdsourcing_like(self):
        preset = ScenarioPreset.crowdsourcing_like()
        assert preset.q == 5 and preset.tp_scans == 1
        assert preset.device_bias_sigma_db > 0

    def test_by_name(self):
        assert preset_by_name("controlled") == ScenarioPreset.controlled()
        with pytest.raises(ValueError):
            preset_by_name("unknown")


class TestCampaign:
    def test_noiseless_equals_truth_predictions(self):
        world = make_world("twist_like", 2, noise=NoiseConfig.none())
        rp = grid_rp_positions(world.plan, 21 / world.plan.area)
        meas, _ = simulate_campaign(world, rp, [], ScenarioPreset.controlled())
        averaged = meas.averaged()
        from radioloc.propagation import predict_rss

        for (rp_id, ap_id), value in list(averaged.items())[:40]:
            p = meas.locations()[rp_id]
            ap = next(a for a in world.aps if a.id == ap_id)
            expected = predict_rss(ModelKind.MWMF, world.truth_for(ap_id),
                                   world.plan, ap, p)
            assert value == pytest.approx(expected, abs=1e-9)

    def test_scan_count_and_nd_tokens(self):
        world = make_world("spinv_like", 2)
        rp = grid_rp_positions(world.plan, 8 / world.plan.area)
        meas, _ = simulate_campaign(world, rp, [], ScenarioPreset.controlled())
        assert meas.q == 50
        assert len(meas.records) == len(rp) * len(world.aps) * 50
        # Heavy walls guarantee some links are below the detection floor.
        assert any(r.rss_dbm is None for r in meas.records)

    def test_reproducibility_bit_identical(self):
        world = make_world("spinv_like", 9)
        rp = grid_rp_positions(world.plan, 15 / world.plan.area)
        tp = template_test_positions("spinv_like", 9, world.plan, 5)
        m1, t1 = simulate_campaign(world, rp, tp, ScenarioPreset.controlled())
        m2, t2 = simulate_campaign(world, rp, tp, ScenarioPreset.controlled())
        assert m1.records == m2.records
        assert all(a.position == b.position and a.fingerprint == b.fingerprint
                   for a, b in zip(t1, t2))

    def test_scan_averaging_reduces_noise(self):
        # With q scans of sigma fast fading and nothing else, the averaged
        # fingerprint error should shrink like sigma/sqrt(q).
        noise = NoiseConfig(shadowing_sigma_db=3.0, slow_fading_sigma_db=0.0,
                            mismatch_sigma_db=0.0, drift_sigma_db=0.0,
                            wall_loss_spread_db=0.0)
        errors = []
        for seed in range(20):
            world = make_world("twist_like", seed, noise=noise)
            rp = grid_rp_positions(world.plan, 21 / world.plan.area)
            meas, _ = simulate_campaign(world, rp, [], ScenarioPreset.controlled())
            averaged = meas.averaged()
            from radioloc.propagation import predict_rss

            for (rp_id, ap_id), value in averaged.items():
                p = meas.locations()[rp_id]
                ap = next(a for a in world.aps if a.id == ap_id)
                truth = predict_rss(ModelKind.MWMF, world.truth_for(ap_id),
                                    world.plan, ap, p)
                if truth > world.detection_floor_dbm + 5:  # avoid censoring bias
                    errors.append(value - truth)
        std = float(np.std(errors))
        assert len(errors) > 500
        assert std == pytest.approx(3.0 / np.sqrt(50), rel=0.15)

    def test_positions_outside_bounds_rejected(self):
        world = make_world("twist_like", 1)
        with pytest.raises(GeometryError):
            simulate_campaign(world, [Point3(100, 1, 1.2)], [],
                              ScenarioPreset.controlled())

    def test_noiseless_pipeline_zero_error_at_virtual_rp(self):
        world = make_world("twist_like", 4, noise=NoiseConfig.none())
        world.detection_floor_dbm = -120.0  # keep every sample for the fit
        rp_positions = grid_rp_positions(world.plan, 41 / world.plan.area)
        probe = Point3(7.3, 4.1, 1.2)
        meas, tps = simulate_campaign(world, rp_positions, [probe],
                                      ScenarioPreset.controlled())
        result = fit(FitStrategy.environment(), ModelKind.MWMF, world.plan,
                     world.aps, meas)
        virtual = generate_virtual_fingerprints(
            result, ModelKind.MWMF, world.plan, world.aps,
            [probe, Point3(12.0, 8.0, 1.2)],
            sentinel_dbm=world.sentinel_dbm,
            detection_floor_dbm=world.detection_floor_dbm)
        real = build_real_fingerprints(meas, world.aps, world.sentinel_dbm)
        rmap = Radiomap(world.aps, real + virtual, area_m2=world.plan.area,
                        sentinel_dbm=world.sentinel_dbm)
        est = locate(rmap, tps[0].fingerprint, WknnConfig(k=3))
        assert abs(est.position.x - probe.x) < 1e-6
        assert abs(est.position.y - probe.y) < 1e-6

    def test_crowdsourcing_degrades_prediction(self):
        # Matched seeds: fewer scans per point must not improve the survey.
        from radioloc.evaluation import run_prediction_analysis

        worse = 0
        for seed in range(4):
            world = make_world("spinv_like", seed)
            rp = grid_rp_positions(world.plan, template_info("spinv_like").dr_max)
            deltas = {}
            for preset in (ScenarioPreset.controlled(),
                           ScenarioPreset.crowdsourcing_like()):
                meas, _ = simulate_campaign(world, rp, [], preset)
                report = run_prediction_analysis(
                    meas, world.plan, world.aps, [1.0],
                    [FitStrategy.environment()], [ModelKind.MWMF],
                    world.sentinel_dbm)
                deltas[preset.name] = report.cells[0].mean_delta_db
            worse += deltas["crowdsourcing"] >= deltas["controlled"]
        assert worse >= 3

import dataclasses

import numpy as np
import pytest

from anchorsim.config import GridConfig, PopulationConfig, RunConfig, TuningConfig
from anchorsim import harness


def tiny_config(tmp_path, **kw):
    base = dict(
        population=PopulationConfig(n_villages=40, mean_children_per_village=12.0, rng_seed=5),
        grid=GridConfig(village_fractions=(0.5, 0.25), response_rates=(0.8,), xis=(1.0, 1.3)),
        tuning=TuningConfig(n_draws=15),
        n_rep=8,
        master_seed=99,
        workers=1,
        output_dir=str(tmp_path / "out"),
    )
    base.update(kw)
    return RunConfig(**base)


class TestBuildGrid:
    def test_default_grid_has_54_cells(self):
        assert len(harness.build_grid(RunConfig())) == 54

    def test_single_cell(self):
        cfg = RunConfig(grid=GridConfig((0.5,), (0.8,), (1.0,)))
        assert len(harness.build_grid(cfg)) == 1

    def test_product_count(self):
        cfg = RunConfig(grid=GridConfig((0.25, 0.5), (0.8,), (1.0, 1.5)))
        assert len(harness.build_grid(cfg)) == 4

    def test_ordering_fraction_desc_rate_desc_xi_asc(self):
        grid = harness.build_grid(RunConfig())
        first = grid[0]
        assert (first.village_fraction, first.response_rate_target, first.xi) == (0.75, 0.8, 1.0)
        xis = [s.xi for s in grid[:6]]
        assert xis == sorted(xis)
        fracs = [s.village_fraction for s in grid]
        assert fracs == sorted(fracs, reverse=True)

    def test_scenario_ids_unique(self):
        grid = harness.build_grid(RunConfig())
        assert len({s.scenario_id for s in grid}) == 54


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("rep"))
    prepared = harness.prepare(cfg)
    table = harness.tune_selection_intercepts(cfg, prepared)
    scenarios = harness.attach_gamma0(harness.build_grid(cfg), table)
    return cfg, prepared, scenarios


class TestRunReplicate:

    def test_same_seed_bit_identical(self, setup):
        cfg, prepared, scenarios = setup
        a = harness.run_replicate(cfg, prepared, scenarios[0], 0, 3)
        b = harness.run_replicate(cfg, prepared, scenarios[0], 0, 3)
        assert a == b

    def test_methods_share_realization(self, setup):
        cfg, prepared, scenarios = setup
        for rep in range(5):
            recs = harness.run_replicate(cfg, prepared, scenarios[1], 1, rep)
            assert len(recs) == 2
            assert recs[0].p_true == recs[1].p_true
            assert {r.method for r in recs} == {"calibrated", "logistic_regression"}

    def test_distinct_reps_distinct_outcomes(self, setup):
        cfg, prepared, scenarios = setup
        a = harness.run_replicate(cfg, prepared, scenarios[0], 0, 0)
        b = harness.run_replicate(cfg, prepared, scenarios[0], 0, 1)
        assert a[0].p_hat != b[0].p_hat

    def test_census_case_recovers_truth(self, setup):
        cfg, prepared, _ = setup
        # Full village fraction plus a selection intercept high enough that
        # every attendance probability is exactly 1 in float.
        scen = harness.Scenario.make(1.0, 0.8, 1.0, gamma0_tuned=50.0)
        recs = harness.run_replicate(cfg, prepared, scen, 0, 0)
        for r in recs:
            assert not r.failed
            assert r.p_hat == pytest.approx(r.p_true, abs=1e-8)

    def test_empty_sample_fails_both_records(self, setup):
        cfg, prepared, _ = setup
        scen = harness.Scenario.make(0.5, 0.8, 1.0, gamma0_tuned=-50.0)
        recs = harness.run_replicate(cfg, prepared, scen, 0, 0)
        assert all(r.failed for r in recs)
        assert all(r.failure_reason == "empty sample" for r in recs)


class TestSeedStreams:
    def test_no_collisions_across_scenario_rep_pairs(self):
        seen = set()
        for ordinal in range(20):
            for rep in range(50):
                ss = np.random.SeedSequence(entropy=123, spawn_key=(3, ordinal, rep))
                seen.add(tuple(ss.generate_state(2)))
        assert len(seen) == 1000


class TestRunGrid:
    def test_outputs_and_summary_shape(self, tmp_path):
        cfg = tiny_config(tmp_path)
        res = harness.run_grid(cfg)
        assert res.replicates_csv.exists()
        assert res.summary_csv.exists()
        assert len(res.summaries) == 4 * 2  # scenarios x methods
        recs, factors = harness.read_records_csv(res.replicates_csv)
        assert len(recs) == 4 * cfg.n_rep * 2
        assert set(factors) == {s.scenario_id for s in harness.build_grid(cfg)}

    def test_rerun_byte_identical(self, tmp_path):
        cfg = tiny_config(tmp_path)
        res1 = harness.run_grid(cfg)
        data1 = res1.replicates_csv.read_bytes()
        summary1 = res1.summary_csv.read_bytes()
        res2 = harness.run_grid(dataclasses.replace(cfg, output_dir=str(tmp_path / "out2")))
        assert res2.replicates_csv.read_bytes() == data1
        assert res2.summary_csv.read_bytes() == summary1

    def test_worker_count_does_not_change_bytes(self, tmp_path):
        cfg1 = tiny_config(tmp_path, workers=1, output_dir=str(tmp_path / "w1"))
        cfg2 = tiny_config(tmp_path, workers=4, output_dir=str(tmp_path / "w4"))
        res1 = harness.run_grid(cfg1)
        res2 = harness.run_grid(cfg2)
        assert res1.replicates_csv.read_bytes() == res2.replicates_csv.read_bytes()
        assert res1.summary_csv.read_bytes() == res2.summary_csv.read_bytes()

    def test_resume_skips_completed_scenarios(self, tmp_path):
        cfg = tiny_config(tmp_path)
        res = harness.run_grid(cfg)
        parts = sorted((res.output_dir / "parts").glob("*.csv"))
        stamps = {p.name: p.stat().st_mtime_ns for p in parts}
        res2 = harness.run_grid(cfg)
        for p in sorted((res2.output_dir / "parts").glob("*.csv")):
            assert p.stat().st_mtime_ns == stamps[p.name]
        assert res2.replicates_csv.read_bytes() == res.replicates_csv.read_bytes()

    def test_scenario_filter_matches_full_run_bytes(self, tmp_path):
        cfg_full = tiny_config(tmp_path, output_dir=str(tmp_path / "full"))
        res_full = harness.run_grid(cfg_full)
        target = harness.build_grid(cfg_full)[2].scenario_id
        cfg_one = tiny_config(tmp_path, output_dir=str(tmp_path / "one"))
        res_one = harness.run_grid(cfg_one, scenario_ids={target})
        part_full = (res_full.output_dir / "parts" / f"{target}.csv").read_bytes()
        part_one = (res_one.output_dir / "parts" / f"{target}.csv").read_bytes()
        assert part_full == part_one

    def test_unknown_scenario_filter_raises(self, tmp_path):
        cfg = tiny_config(tmp_path)
        with pytest.raises(ValueError, match="unknown scenario"):
            harness.run_grid(cfg, scenario_ids={"vf0.99_rr0.99_xi9.9"})

    def test_config_change_invalidates_cache(self, tmp_path):
        cfg = tiny_config(tmp_path)
        harness.run_grid(cfg)
        cfg2 = dataclasses.replace(cfg, n_rep=5)
        res2 = harness.run_grid(cfg2)
        recs, _ = harness.read_records_csv(res2.replicates_csv)
        assert len(recs) == 4 * 5 * 2

    def test_tuning_cache_hit(self, tmp_path):
        cfg = tiny_config(tmp_path)
        prepared = harness.prepare(cfg)
        out = tmp_path / "out"
        t1 = harness.load_or_tune(cfg, prepared, out)
        stamp = (out / "tuning.json").stat().st_mtime_ns
        t2 = harness.load_or_tune(cfg, prepared, out)
        assert t1 == t2
        assert (out / "tuning.json").stat().st_mtime_ns == stamp


class TestPopulationRedraw:
    def test_redraw_changes_census_per_replicate(self, tmp_path):
        cfg = tiny_config(tmp_path, population_redraw_per_replicate=True)
        prepared = harness.prepare(cfg)
        scen = harness.Scenario.make(1.0, 0.8, 1.0, gamma0_tuned=50.0)
        a = harness.run_replicate(cfg, prepared, scen, 0, 0)
        b = harness.run_replicate(cfg, prepared, scen, 0, 1)
        # Census-mode estimates equal their own replicate's truth but the
        # truths differ because the census itself was redrawn.
        assert a[0].p_hat == pytest.approx(a[0].p_true, abs=1e-8)
        assert a[0].p_true != b[0].p_true

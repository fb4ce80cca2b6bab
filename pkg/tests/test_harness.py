import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from trialadjust import dgp, harness
from trialadjust.estimators import EstimateResult
from trialadjust.learners import LearnerSpec
from trialadjust.numerics import make_rng, normal_quantile, two_sided_p_value

FAST_LIB = [LearnerSpec("mean"), LearnerSpec("ols")]
SMALL = dgp.ScenarioConfig("heterogeneous", "obs-large", n=40, n_hist=100)


def fake(psi, se, truth=1.0, rep=0, name="x"):
    z = normal_quantile(0.975)
    est = EstimateResult(name, psi, psi, 0.0, se, psi - z * se, psi + z * se,
                         float(two_sided_p_value(psi / se)))
    return harness.ReplicationResult(rep, truth, {name: est}, {}, False)


class TestAggregate:
    def test_hand_fixture(self):
        results = [fake(p, 0.2, rep=i) for i, p in enumerate((0.5, 1.0, 1.5))]
        row = harness.aggregate(results, "x")
        assert row.mean_est_se == pytest.approx(0.2)
        assert row.empirical_se == pytest.approx(0.5)
        # half-width 1.96 * 0.2 = 0.392 < 0.5, so only the middle CI covers 1.0
        assert row.coverage == pytest.approx(1 / 3)
        assert row.power == 1.0
        assert row.mean_bias == pytest.approx(0.0)
        assert (row.reps_used, row.failures) == (3, 0)

    def test_identical_estimates(self):
        row = harness.aggregate([fake(1.0, 0.3, rep=i) for i in range(4)], "x")
        assert row.empirical_se == 0.0 and row.coverage == 1.0

    def test_failures_excluded_and_flagged(self):
        results = [fake(1.0, 0.3, rep=0), harness.ReplicationResult(1, 1.0, {"x": None}, {"x": "boom"}, False)]
        row = harness.aggregate(results, "x")
        assert row.flagged and row.failures == 1 and math.isnan(row.power)


class TestReplication:
    def test_deterministic(self):
        a = harness.run_replication(SMALL, ["unadjusted", "within-trial", "prog-historical"], 3, 11, FAST_LIB,
                                    folds=4, sl_folds=4)
        b = harness.run_replication(SMALL, ["unadjusted", "within-trial", "prog-historical"], 3, 11, FAST_LIB,
                                    folds=4, sl_folds=4)
        for k in a.estimates:
            assert a.estimates[k].to_json() == b.estimates[k].to_json()

    def test_lazy_historical(self):
        r = harness.run_replication(SMALL, ["unadjusted"], 0, 1, FAST_LIB)
        assert not r.sampled_historical
        r = harness.run_replication(SMALL, ["unadjusted", "prog-historical"], 0, 1, FAST_LIB, sl_folds=4)
        assert r.sampled_historical

    def test_failure_is_captured(self, monkeypatch):
        def boom(rep, alpha):
            raise RuntimeError("nope")

        monkeypatch.setitem(harness.ESTIMATORS, "ancova", boom)
        r = harness.run_replication(SMALL, ["unadjusted", "ancova"], 0, 1, FAST_LIB)
        assert r.estimates["ancova"] is None and "nope" in r.errors["ancova"]
        assert r.estimates["unadjusted"] is not None

    def test_truth_shared_within_scenario(self):
        r = harness.run_replication(SMALL, ["unadjusted", "oracle"], 0, 1, FAST_LIB)
        assert r.truth == dgp.true_ate("heterogeneous")[0]

    def test_replication_streams_distinct(self):
        draws = [make_rng(12345, rep, 0).random(1000) for rep in range(20)]
        for i in range(20):
            for j in range(i + 1, 20):
                assert not np.any(np.isin(draws[i], draws[j]))


def tiny_plan(**kw):
    return harness.SimulationPlan([SMALL], ["unadjusted", "within-trial", "tmle", "prog-historical", "oracle"],
                                  reps=6, master_seed=5, learners=FAST_LIB, folds=4, sl_folds=4, **kw)


class TestStudy:
    def test_worker_count_does_not_change_output(self):
        one = harness.metrics_csv(harness.run_study(tiny_plan(), workers=1))
        two = harness.metrics_csv(harness.run_study(tiny_plan(), workers=2))
        assert one == two

    def test_rows_and_invariants(self):
        rows = harness.run_study(tiny_plan())
        assert [r.estimator for r in rows] == ["unadjusted", "within-trial", "tmle", "prog-historical", "oracle"]
        for r in rows:
            assert 0 <= r.power <= 1 and 0 <= r.coverage <= 1 and r.empirical_se > 0
            assert r.reps_used + r.failures == 6

    def test_sweep_expands_grid(self):
        plan = harness.sweep_plan(reps=3, master_seed=2, grid=[20, 30], estimators=["unadjusted"],
                                  learners=FAST_LIB)
        rows = harness.run_sweep_study(plan)
        assert [(r.n, r.scenario) for r in rows] == [(20, "heterogeneous/none"), (30, "heterogeneous/none")]

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            harness.SimulationPlan([SMALL], ["magic"])
        with pytest.raises(ValueError):
            harness.SimulationPlan([SMALL], reps=0)
        with pytest.raises(ValueError):
            harness.SimulationPlan([SMALL], sweep=[50, 50])

    def test_plan_json_round_trip(self):
        plan = tiny_plan()
        again = harness.plan_from_json(json.dumps(plan.to_dict()))
        assert again == plan

    def test_scenario_plan_covers_six(self):
        plan = harness.scenario_plan(reps=1)
        assert [s.label for s in plan.scenarios] == [f"{e}/{s}" for e, s in harness.SCENARIOS]
        assert all(s.n == 200 and s.n_hist == 4000 for s in plan.scenarios)

    def test_default_grid(self):
        assert harness.SWEEP_GRID[:3] == (50, 60, 70) and harness.SWEEP_GRID[-1] == 400
        assert len(harness.SWEEP_GRID) == 16 + 8


class TestOutput:
    def test_csv_round_trip(self, tmp_path):
        rows = harness.run_study(tiny_plan())
        path = tmp_path / "m.csv"
        harness.write_metrics_csv(rows, path)
        assert path.read_text().splitlines()[0] == ",".join(harness.METRIC_COLUMNS)
        assert harness.read_metrics_csv(path) == rows

    @pytest.mark.parametrize("metric", ["power", "mean_est_se"])
    def test_svg_is_valid_xml(self, metric):
        rows = [harness.MetricsRow(e, "s", n, 0.1, 0.1, n / 400, 0.95, 0.0, 10, 0)
                for e in ("a", "b") for n in (50, 100, 400)]
        root = ET.fromstring(harness.svg_chart(rows, metric))
        assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 2

    def test_svg_scenario_axis(self):
        rows = [harness.MetricsRow("a", f"s{i}", 200, 0.1 * i, 0.1, 1.0, 0.95, 0.0, 10, 0) for i in range(3)]
        svg = harness.svg_chart(rows, "mean_est_se")
        assert "s2" in svg and ">scenario<" in svg

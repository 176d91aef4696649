import math

import numpy as np
import pytest

from chirpsep.estimation import ChirpEstimate
from chirpsep.harness import (ExperimentConfig, HEATMAP_COLUMNS, SWEEP_COLUMNS, cell_key,
                              emit_heatmap, experiment_rmse, ground_truth, make_plan,
                              match_estimates, run_sweep)
from chirpsep.io import load_scenario
from chirpsep.signal_model import ChirpPulseTrain, Scenario


def perfect(scenario, scale=1.0):
    return [ChirpEstimate(b.start, b.end - b.start, b.theta * scale, b.slope * scale, 0.0, 0.0,
                          0.0, np.arange(10)) for b in ground_truth(scenario)]


@pytest.fixture(scope="module")
def ex1():
    return load_scenario("example1").scenario


def test_perfect_estimates(ex1):
    plan = make_plan(ex1)
    est = perfect(ex1)
    rep = match_estimates(ex1, est, plan)
    assert rep.detected == rep.total == 12
    assert experiment_rmse(ex1, est, plan, rep) == 0.0
    rows = emit_heatmap(ex1, est, plan).splitlines()
    assert rows[0] == ",".join(HEATMAP_COLUMNS)
    assert all(float(r.split(",")[3]) == 0.0 for r in rows[1:])


def test_no_estimates(ex1):
    plan = make_plan(ex1)
    rep = match_estimates(ex1, [], plan)
    assert rep.detected == 0 and rep.total == 12
    assert math.isnan(experiment_rmse(ex1, [], plan, rep))
    assert emit_heatmap(ex1, [], plan) == ",".join(HEATMAP_COLUMNS) + "\n"


def test_rmse_closed_form():
    sc = Scenario((ChirpPulseTrain(theta=1.2e9, bandwidth_param=1e7, duration=1e-4),),
                  1e-4, 5e8, band_center=1.2e9)
    plan = make_plan(sc)
    est = perfect(sc, 1.005)
    assert experiment_rmse(sc, est, plan) == pytest.approx(0.005, rel=1e-9)


def test_one_estimate_matches_one_of_two_collinear_bursts():
    sc = Scenario((ChirpPulseTrain(theta=1.2e9, duration=3e-5, start_time=1e-5, pri=4e-5,
                                   burst_count=2),), 1e-4, 5e8, band_center=1.2e9)
    line = ChirpEstimate(1e-5, 7e-5, 1.2e9, 0.0, 0.0, 0.0, 0.0, np.arange(3))
    rep = match_estimates(sc, [line], make_plan(sc))
    assert rep.detected == 1 and rep.total == 2


def test_fit_order_beats_overlap_order():
    # parallel bursts 10 MHz apart; the long estimate lies on the short burst's line
    sc = Scenario((ChirpPulseTrain(theta=1.20e9, bandwidth_param=1e7, duration=6e-5,
                                   start_time=1e-5),
                   ChirpPulseTrain(theta=1.21e9, bandwidth_param=5e6, duration=3e-5,
                                   start_time=1e-5)), 1e-4, 5e8, band_center=1.2e9)
    slope = 2e7 / 6e-5
    a = ChirpEstimate(1e-5, 6e-5, 1.21e9, slope, 0, 0, 0, np.arange(3))
    b = ChirpEstimate(1e-5, 3.5e-5, 1.20e9, slope, 0, 0, 0, np.arange(3))
    assert match_estimates(sc, [a, b]).assignment == {0: 1, 1: 0}
    assert match_estimates(sc, [a, b], order="overlap").assignment == {0: 0, 1: 1}
    with pytest.raises(ValueError):
        match_estimates(sc, [a, b], order="random")


def test_tolerance_rejects_far_estimate(ex1):
    far = perfect(ex1, 2.0)
    assert match_estimates(ex1, far).detected == 0


def test_cell_key_stable():
    assert cell_key("example1", 0.0, 5e8) == cell_key("example1", 0.0, 5e8)
    assert cell_key("example1", 0.0, 5e8) != cell_key("example1", -10.0, 5e8)
    assert 0 <= cell_key("x", 1.0, 1.0) < 2 ** 32


def test_sweep_csv_deterministic():
    sf = load_scenario("crossover")
    cfg = ExperimentConfig(sf, [0.0], [5e8], trials=2, base_seed=3,
                           plan_overrides={"snippets": 800})
    a, b = run_sweep(cfg), run_sweep(cfg)
    text = a.to_csv()
    assert text == b.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 2 and lines[1].split(",")[1] == "crossover"
    assert "RMSE" in a.table()


def test_experiment_config_validation(ex1):
    sf = load_scenario("example1")
    with pytest.raises(ValueError):
        ExperimentConfig(sf, [0.0], [5e8], trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(sf, [], [5e8])

import csv

import pytest
from scipy import linalg

from core.analysis.survey import (ERROR, UNCERTIFIED, RunRecord, SurveyConfig, SurveyReport, cluster_runs,
                                  estimate_ionization_floor, run_indexed, run_survey, stability_under_doubling,
                                  threshold_census, write_survey_csv)
from core.hf.scf import ScfOptions
from tests.conftest import System


def record(index, energy, eps, outcome="converged"):
    initial = None if energy is None else energy + 1.0
    return RunRecord(index, (0, index), outcome, energy, tuple(eps), 1e-10, initial)


@pytest.fixture(scope="module")
def helium_survey(helium):
    config = SurveyConfig(n_starts=4, seed=3, epsilon=1e-3)
    return run_survey(helium.molecule, helium.basis, config, helium.tables)


def test_ionization_floor_is_lowest_core_level(helium, helium_survey):
    lowest = linalg.eigh(helium.tables.hcore, helium.tables.S, eigvals_only=True)[0]
    assert helium_survey.j_est == pytest.approx(lowest, rel=1e-9)


def test_floor_of_one_electron_is_zero(hydrogen):
    assert estimate_ionization_floor(hydrogen.molecule, hydrogen.basis, SurveyConfig(n_starts=1)) == 0.0


def test_helium_census(helium_survey):
    assert helium_survey.clusters
    assert helium_survey.below_threshold_census >= 1
    assert helium_survey.gamma_census >= 1
    assert helium_survey.contract_violations == 0
    assert helium_survey.unexplored_minimum_flags == []
    assert helium_survey.descent_violations == 0
    assert [run.seed for run in helium_survey.runs] == [(3, i) for i in range(4)]


def test_census_at_huge_epsilon(helium, helium_survey):
    gamma, below = threshold_census(helium_survey, helium_survey.j_est, 1e6)
    assert (gamma, below) == (0, 0)


def test_survey_is_deterministic(helium, helium_survey):
    config = SurveyConfig(n_starts=4, seed=3, epsilon=1e-3)
    again = run_survey(helium.molecule, helium.basis, config, helium.tables)
    assert again.to_dict() == helium_survey.to_dict()


def test_report_dict(helium_survey):
    data = helium_survey.to_dict()
    assert data["n_electrons"] == 2
    assert data["config"]["n_starts"] == 4
    assert data["n_certified"] == sum(c["multiplicity"] for c in data["clusters"])
    assert set(data["failures"]) == {"oscillating", "max_iter", UNCERTIFIED, ERROR}


def test_cluster_runs_groups_close_energies():
    runs = [record(0, -1.0, [-0.9, -0.1]), record(1, -1.0 + 1e-8, [-0.91, -0.09]),
            record(2, -0.5, [-0.6, -0.05]), record(3, None, [], outcome="max_iter"),
            record(4, -2.0, [-1.0, -0.5], outcome=UNCERTIFIED)]
    clusters = cluster_runs(runs, 1e-6)
    assert [c.multiplicity for c in clusters] == [2, 1]
    assert clusters[0].energy == -1.0
    assert clusters[0].members == (0, 1)
    assert clusters[0].eps_min == (-0.91, -0.1)
    assert clusters[0].eps_max == (-0.9, -0.09)
    assert clusters[1].cluster_id == 1
    assert cluster_runs(runs[3:], 1e-6) == []
    assert len(cluster_runs(runs[:1], 1e-6)) == 1


def test_threshold_census_and_contract():
    runs = [record(0, -1.2, [-0.9, -0.1]), record(1, -1.05, [-0.8, -0.005]), record(2, -0.9, [-0.6, -0.2])]
    config = SurveyConfig(n_starts=3, epsilon=0.01)
    report = SurveyReport(2, config, runs, cluster_runs(runs, 1e-6))
    assert threshold_census(report, -1.0, 0.01) == (2, 2)
    assert threshold_census(report, -1.0, 0.15) == (1, 1)


def test_failures_are_counted():
    runs = [record(0, -1.0, [-0.5]), record(1, None, [], outcome="max_iter"),
            record(2, None, [], outcome="oscillating"), record(3, None, [], outcome=ERROR)]
    report = SurveyReport(1, SurveyConfig(n_starts=4), runs, cluster_runs(runs, 1e-6))
    assert report.failures == {"oscillating": 1, "max_iter": 1, UNCERTIFIED: 0, ERROR: 1}
    assert report.cluster_of(0) == 0
    assert report.cluster_of(1) is None


def test_survey_csv(tmp_path, helium_survey):
    path = tmp_path / "survey.csv"
    write_survey_csv(helium_survey, path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["seed", "outcome", "E", "eps_1", "eps_2", "residual", "cluster_id"]
    assert len(rows) == 5
    assert rows[1][0] == "3:0"


def test_hydrogen_stable_under_doubling(hydrogen):
    result = stability_under_doubling(hydrogen.molecule, hydrogen.basis, SurveyConfig(n_starts=2, epsilon=0.01),
                                      epsilons=(0.01, 0.1), tables=hydrogen.tables)
    assert result.stable
    assert result.single == result.doubled
    assert result.to_dict()["n_starts"] == 2


def test_run_indexed_keeps_order(monkeypatch):
    monkeypatch.setenv("HF_LAB_THREADS", "3")
    assert run_indexed(lambda i: i * i, 7) == [i * i for i in range(7)]
    monkeypatch.setenv("HF_LAB_THREADS", "1")
    assert run_indexed(lambda i: -i, 3) == [0, -1, -2]


def test_survey_config_validation():
    with pytest.raises(ValueError, match="n_starts"):
        SurveyConfig(n_starts=0)
    with pytest.raises(ValueError, match="epsilon"):
        SurveyConfig(epsilon=0.0)
    with pytest.raises(ValueError, match="cluster_tol"):
        SurveyConfig(cluster_tol=-1.0)
    with pytest.raises(ValueError, match="Unknown survey option"):
        SurveyConfig.from_settings({"starts": 3})
    config = SurveyConfig.from_settings({"n_starts": 7, "seed": None}, scf=ScfOptions(max_iter=50))
    assert config.n_starts == 7 and config.seed == 0
    assert config.scf.max_iter == 50
    assert config.with_starts(14).n_starts == 14


@pytest.fixture(scope="module")
def helium_five():
    return System("he_five_even_tempered.json")


@pytest.mark.slow
def test_five_function_helium_stable_under_doubling(helium_five):
    config = SurveyConfig(n_starts=100, seed=0)
    result = stability_under_doubling(helium_five.molecule, helium_five.basis, config, epsilons=(0.01, 0.05),
                                      tables=helium_five.tables)
    assert result.n_starts == 100
    assert result.stable
    assert [entry[1] for entry in result.single] == [entry[1] for entry in result.doubled]


@pytest.mark.slow
def test_five_function_helium_contract_at_two_hundred_starts(helium_five):
    for epsilon in (0.01, 0.05):
        config = SurveyConfig(n_starts=200, seed=0, epsilon=epsilon)
        report = run_survey(helium_five.molecule, helium_five.basis, config, helium_five.tables)
        assert report.contract_violations == 0
        assert report.descent_violations == 0
        for cluster in report.clusters:
            if cluster.energy < report.j_est - epsilon:
                assert cluster.highest_orbital_energy < -epsilon

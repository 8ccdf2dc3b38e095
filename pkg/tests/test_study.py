import numpy as np
import pytest

from semicomp import ConfigurationError, StudyConfig, oracle_incidence, run_study
from semicomp.study import replicate


def test_single_replication_flags_sd():
    rep = run_study(StudyConfig(setting_id=1, replications=1, seed=1))
    for row in rep.rows:
        assert not row["sd_defined"]
        assert np.isnan(row["emp_sd"]) and np.isnan(row["emp_var"])
        assert np.isfinite(row["mean"]) and row["coverage"] in (0.0, 1.0)


def test_report_shape_and_truth():
    rep = run_study(StudyConfig(setting_id=1, replications=100, seed=2))
    frame = rep.to_frame()
    assert len(frame) == 6
    assert frame["coverage"].notna().all()
    row = rep.row((1, 0, 1), 4.0)
    assert row["truth"] == pytest.approx(oracle_incidence(1, (1, 0, 1), 4.0).value)
    assert row["replications"] == 100
    assert rep.estimates[(1, 0, 1)].shape == (100, 3)


def test_replications_are_seeded():
    cfg = StudyConfig(setting_id=2, replications=4, seed=3)
    a = run_study(cfg)
    b = run_study(cfg)
    np.testing.assert_array_equal(a.estimates[(1, 0, 0)], b.estimates[(1, 0, 0)])


def test_parallel_matches_serial():
    cfg = StudyConfig(setting_id=1, replications=6, seed=4)
    np.testing.assert_array_equal(run_study(cfg, jobs=2).estimates[(1, 0, 0)],
                                  run_study(cfg).estimates[(1, 0, 0)])


def test_eif_replicate():
    out = replicate(StudyConfig(setting_id=2, method="eif", times=(2.0, 4.0)), seed=5)
    est, var = out[(1, 0, 0)]
    assert est.shape == (2,) and np.all(var > 0)


def test_failures_are_recorded():
    # n=20 leaves EIF cells below the minimum size
    rep = run_study(StudyConfig(setting_id=2, n=20, replications=3, method="eif"), truth={
        (a, t): 0.0 for a in ((1, 0, 0), (1, 0, 1)) for t in (2.0, 4.0, 6.0)})
    assert len(rep.failures) == 3
    assert "PositivityError" in rep.failures[0]["error"]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        StudyConfig(replications=0)
    with pytest.raises(ConfigurationError):
        StudyConfig(method="eif", clock="semimarkov")
    assert StudyConfig().to_dict()["vectors"] == [[1, 0, 0], [1, 0, 1]]

import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fixsmooth.distributions import g1, t_abs_cdf, t_quantile
from fixsmooth.harness import (
    ErpRow,
    ExperimentConfig,
    radial_rate_terms,
    run_erp,
    run_power,
    run_rate_diagnostics,
    run_upsilon_surface,
    solve_quantile,
    write_csv,
)
from fixsmooth.models import ProcessModel, group_mean_covariance
from oracles import p_abs_t_le


def by_method(rows):
    return {r.method: r for r in rows}


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("erp", seed=None)
    with pytest.raises(ValueError):
        ExperimentConfig("erp", seed=1, T=())
    with pytest.raises(ValueError):
        ExperimentConfig("erp", seed=1, reps=10)
    a = ExperimentConfig("erp", seed=1)
    assert a.digest() == ExperimentConfig("erp", seed=1).digest() != ExperimentConfig("erp", seed=2).digest()


def test_solve_quantile():
    x = solve_quantile(lambda s: g1(s * s), 0.95, 10.0)
    assert abs(x - 1.959963984540054) < 1e-5
    assert solve_quantile(lambda s: t_abs_cdf(3, s), 0.95, 0.5) == pytest.approx(t_quantile(3, 0.975), abs=1e-4)


def test_upsilon_surface_shape(tmp_path):
    out = tmp_path / "ups.csv"
    rows = run_upsilon_surface([2, 4, 8, 16, 128], [0.01, 0.05, 0.1], reps=50_000, seed=1, out=out, method="quad")
    vals = {(r[0], r[1]): r[3] for r in rows}
    for K in (2, 4, 8, 16):
        assert vals[(K, 0.01)] < vals[(K, 0.05)] < vals[(K, 0.1)]
    growth = [vals[(K2, 0.05)] - vals[(K1, 0.05)] for K1, K2 in ((2, 4), (4, 8), (8, 16))]
    assert all(g > 0 for g in growth) and growth[0] > growth[-1]
    for a in (0.01, 0.05, 0.1):
        r = next(r for r in rows if r[0] == 128 and r[1] == a)
        assert abs(r[3] - r[5]) <= 0.05 * r[5]
    with out.open() as fh:
        header = next(csv.reader(fh))
    assert header == ["K", "alpha", "x", "upsilon_over_K", "se", "limit_at_x", "limit_at_z", "reps"]
    assert json.loads((tmp_path / "ups.csv.manifest.json").read_text())["seed"] == 1


@pytest.fixture(scope="module")
def erp_rows():
    cfg = ExperimentConfig("erp", seed=2024, models=("ar1:0.5", "ma1:-0.5"), T=(256,), smoothing=(8,),
                           alphas=(0.05,), reps=50_000, methods=("first-order", "second-order", "naive"))
    return run_erp(cfg)


def test_erp_size_directions(erp_rows):
    ar = by_method(r for r in erp_rows if r.model == "ar1:0.5")
    ma = by_method(r for r in erp_rows if r.model == "ma1:-0.5")
    assert ar["first-order"].rate - 0.05 > 3 * ar["first-order"].se
    assert 0.05 - ma["first-order"].rate > 3 * ma["first-order"].se
    for cell in (ar, ma):
        assert abs(cell["second-order"].rate - 0.05) < abs(cell["first-order"].rate - 0.05)
        assert cell["naive"].critical_value < cell["first-order"].critical_value


def test_erp_first_order_matches_exact(erp_rows):
    # the exact rejection probability of the first-order test, from Imhof
    ar = by_method(r for r in erp_rows if r.model == "ar1:0.5")["first-order"]
    exact = 1 - p_abs_t_le(ar.critical_value, group_mean_covariance(ProcessModel.ar1(0.5), 8, 32).matrix)
    assert abs(ar.rate - exact) <= 3 * ar.se


def test_erp_reproducible(tmp_path):
    cfg = ExperimentConfig("erp", seed=5, models=("ar1:0.5",), T=(128,), smoothing=(4,), reps=4000,
                           methods=("first-order",), out=str(tmp_path / "a.csv"))
    a = run_erp(cfg)
    b = run_erp(cfg)
    assert a == b
    text = (tmp_path / "a.csv").read_text().splitlines()
    assert text[0].split(",")[:3] == ["method", "model", "T"]
    manifest = json.loads((tmp_path / "a.csv.manifest.json").read_text())
    assert manifest["config_sha256"] == cfg.digest()


def test_erp_wald_cell():
    cfg = ExperimentConfig("erp", seed=3, models=("ar1:0.3",), T=(256,), smoothing=(("qs", 0.1, False),),
                           reps=5000, expansion_reps=20_000, methods=("first-order", "small-b", "naive"))
    rows = by_method(run_erp(cfg))
    assert set(rows) == {"first-order", "small-b", "naive"}
    assert rows["naive"].critical_value < rows["first-order"].critical_value
    assert all(0 <= r.rate <= 1 for r in rows.values())


def test_erp_records_errors():
    cfg = ExperimentConfig("erp", seed=3, models=("iid",), T=(100,), smoothing=(8,), reps=1000,
                           methods=("first-order",))
    rows = run_erp(cfg)
    assert rows[0].error == "UnequalGroups" and np.isnan(rows[0].rate)


def test_erp_row_validation():
    with pytest.raises(ValueError):
        ErpRow("m", "iid", 8, "K=2", 0.05, 1.5, 0.0, 0.0, 0.0, 1)


def test_power_curves():
    cfg = ExperimentConfig("power", seed=9, models=("ar1:0.5",), T=(256,), smoothing=(4, 16), alphas=(0.05,),
                           reps=20_000, expansion_reps=100_000, deltas=(0.0, 1.0, 2.0))
    rows = run_power(cfg)
    rate = {(r[2], r[4]): (r[5], r[6]) for r in rows}
    for K in (4, 16):
        assert rate[(K, 0.0)][0] < rate[(K, 1.0)][0] < rate[(K, 2.0)][0]
    (r4, s4), (r16, s16) = rate[(4, 2.0)], rate[(16, 2.0)]
    assert r16 > r4 - 3 * np.hypot(s4, s16)
    # delta = 0 reproduces the size experiment on the same streams
    size = run_erp(ExperimentConfig("erp", seed=9, models=("ar1:0.5",), T=(256,), smoothing=(4,),
                                    reps=20_000, methods=("first-order",)))
    assert rate[(4, 0.0)][0] == size[0].rate


def test_power_prediction_tracks_rate():
    cfg = ExperimentConfig("power", seed=4, models=("ar1:0.5",), T=(256,), smoothing=(8,), reps=50_000,
                           expansion_reps=200_000, deltas=(2.0,))
    r = run_power(cfg)[0]
    rate, se, first, pred = r[5], r[6], r[7], r[8]
    assert abs(pred - rate) < abs(first - rate) or abs(pred - rate) < 3 * se


def test_radial_terms_match_exact():
    model, K, x = ProcessModel.ar1(0.5), 4, t_quantile(3, 0.975)
    terms = radial_rate_terms(model, K, [128], x, 200_000, seed=1)[128]
    exact = p_abs_t_le(x, group_mean_covariance(model, K, 32).matrix / model.sigma2)
    assert abs(terms["minus_first"] - (exact - t_abs_cdf(3, x))) <= 4 * terms["minus_first_se"]


def test_radial_terms_vanish_for_iid():
    terms = radial_rate_terms(ProcessModel.iid(), 4, [128, 256], 3.18, 20_000, seed=1)
    for t in terms.values():
        assert t["minus_first"] == 0.0 and t["minus_psi"] == 0.0


def test_rate_diagnostics_rows(tmp_path):
    cfg = ExperimentConfig("rates", seed=1, models=("iid",), T=(128, 256), smoothing=(4,), reps=20_000,
                           out=str(tmp_path / "r.csv"))
    rows = run_rate_diagnostics(cfg)
    assert [r[0] for r in rows] == ["emp_minus_psi"] * 2 + ["emp_minus_first"] * 2
    assert np.isnan(rows[0][6]) and rows[1][3] == 256
    assert (tmp_path / "r.csv").exists()


def test_write_csv_overwrites(tmp_path):
    p = tmp_path / "x.csv"
    write_csv([(1, 2)], p, ["a", "b"])
    write_csv([(3, 4)], p, ["a", "b"])
    assert p.read_text().splitlines() == ["a,b", "3,4"]
    assert not list(tmp_path.glob("*.tmp"))


def test_upsilon_rows_quad_vs_mc():
    a = run_upsilon_surface([8], [0.05], reps=100_000, seed=3)[0]
    b = run_upsilon_surface([8], [0.05], method="quad")[0]
    assert abs(a[3] - b[3]) <= 4 * a[4]
    assert_allclose(a[5], b[5])

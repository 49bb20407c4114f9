import math

import numpy as np
import pytest
from scipy import integrate

from npgap.amortization import (
    ScalarGapInputs,
    aggregation_comparison,
    correlation_test,
    dimension_scan,
    mc_gap_regression,
    mc_scalar_gap,
    pathology_table,
    power_law_fit,
    scalar_gap_formula,
)
from npgap.errors import NumericalError, ParameterError


def test_formula_examples():
    assert scalar_gap_formula(ScalarGapInputs.from_lengthscale(5, 0.3)) == pytest.approx(0.01453, abs=5e-6)
    inp = ScalarGapInputs.from_lengthscale(100, 0.3)
    assert inp.alpha == pytest.approx(64.14, abs=5e-3)
    assert scalar_gap_formula(inp) == pytest.approx(0.00121, abs=5e-6)
    big = scalar_gap_formula(ScalarGapInputs.from_lengthscale(2000, 0.3))
    assert big == pytest.approx(0.0000624, abs=5e-8)
    assert big < 1 / 16000 and 1 / 16000 == pytest.approx(0.0000625)


def test_formula_approaches_asymptote():
    vals = [scalar_gap_formula(ScalarGapInputs(n, 0.6414)) * 8 * n for n in (10, 100, 1000, 10_000)]
    assert np.all(np.diff(vals) > 0) and vals[-1] == pytest.approx(1.0, abs=1e-3)


def test_inputs_validation():
    with pytest.raises(ParameterError):
        ScalarGapInputs(0, 0.6)
    with pytest.raises(ParameterError):
        ScalarGapInputs(5, 0.6, 0.0)


def test_mc_gap_zero_alpha():
    est = mc_scalar_gap(ScalarGapInputs(10, 0.0), draws=2000, seed=1)
    assert est.value == 0.0 and est.std_err == 0.0


def test_mc_gap_against_quadrature_n1():
    # n = 1: E over x ~ U[0,1] of KL with v = 2 cos^2(pi x), by quadrature
    a = 0.6414

    def kl(x):
        r = (1 + a * 2 * math.cos(math.pi * x) ** 2) / (1 + a)
        return 0.5 * (r - 1 - math.log(r))

    exact, _ = integrate.quad(kl, 0, 1, epsabs=1e-13)
    est = mc_scalar_gap(ScalarGapInputs(1, a), draws=100_000, seed=2)
    assert abs(est.value - exact) < 4 * est.std_err


def test_mc_gap_n100_example():
    inp = ScalarGapInputs.from_lengthscale(100, 0.3)
    est = mc_scalar_gap(inp, 100_000, seed=7)
    assert abs(est.value - 0.00122) < 3 * est.std_err + 5e-6
    assert est.value / scalar_gap_formula(inp) == pytest.approx(1.008, abs=0.01)


def test_mc_gap_deterministic_and_thread_independent():
    inp = ScalarGapInputs.from_lengthscale(20, 0.3)
    a = mc_scalar_gap(inp, 5500, seed=3)
    assert a == mc_scalar_gap(inp, 5500, seed=3)
    assert a == mc_scalar_gap(inp, 5500, seed=3, threads=3)
    assert a != mc_scalar_gap(inp, 5500, seed=4)


def test_mc_gap_needs_draws():
    with pytest.raises(ParameterError):
        mc_scalar_gap(ScalarGapInputs(5, 0.6), draws=999)


def test_correlation_examples():
    # under zero true correlation the estimate has sd 1/sqrt(draws)
    r = correlation_test(50, 50_000, seed=0)
    assert r.var_vhat == pytest.approx(0.01, rel=0.02) and abs(r.corr) < 4 / math.sqrt(50_000)
    r = correlation_test(1000, 50_000, seed=0)
    assert r.var_vhat == pytest.approx(0.0005, rel=0.02) and abs(r.corr) < 4 / math.sqrt(50_000)
    with pytest.raises(ParameterError):
        correlation_test(10, 9999)


def test_pathology_rows():
    rows = {(r["x1"], r["x2"]): r for r in pathology_table()}
    assert rows[(0.1, 0.9)]["sigma_p_inv"] == pytest.approx(3.321, abs=5e-4)
    assert rows[(0.1, 0.9)]["sigma_p"] == pytest.approx(0.301, abs=5e-4)
    assert rows[(0.4, 0.6)]["sigma_p_inv"] == pytest.approx(1.245, abs=5e-4)
    assert rows[(0.4, 0.6)]["sigma_p"] == pytest.approx(0.803, abs=5e-4)
    for r in rows.values():
        assert abs(r["mean_rep"]) < 1e-12
        assert r["kl_avg_to_p"] >= 0 and r["kl_p_to_avg"] >= 0


def test_pathology_midpoint_is_prior():
    (row,) = pathology_table([(0.5, 0.5)])
    assert row["sigma_p_inv"] == pytest.approx(1.0, abs=1e-30)


def test_pathology_rejects_asymmetric_pair():
    with pytest.raises(ParameterError):
        pathology_table([(0.1, 0.8)])


def test_regression_examples():
    assert mc_gap_regression(3, 100, "mean", seed=0).value == pytest.approx(0.0052, rel=0.2)
    assert mc_gap_regression(3, 500, "second_order", seed=0).value == pytest.approx(0.000028, rel=0.3)
    assert mc_gap_regression(1, 50, "mean", seed=0).value == pytest.approx(0.00250, rel=0.2)


def test_regression_pairs_contexts_and_is_deterministic():
    a = mc_gap_regression(2, 30, "mean", 500, seed=5)
    assert a == mc_gap_regression(2, 30, "mean", 500, seed=5)
    assert a.draws == 500 and a.std_err > 0


def test_regression_rank_deficiency_reported():
    # d = 3 second-order features are linearly dependent
    with pytest.raises(NumericalError, match="rank"):
        mc_gap_regression(3, 10, "second_order", 200, seed=0, strict=True)
    assert mc_gap_regression(3, 10, "second_order", 200, seed=0).value >= 0


def test_regression_needs_enough_contexts():
    with pytest.raises(ParameterError):
        mc_gap_regression(3, 10, "second_order", 59)


def test_regression_d1_second_order_is_near_exact():
    # d = 1: Sigma_p = 1/(1 + n v), v is the single feature; only the linear fit of a
    # reciprocal is lost, which is tiny at n = 50
    est = mc_gap_regression(1, 50, "second_order", 2000, seed=0)
    assert est.value < 1e-4


def test_power_law_fit():
    ns = [10, 50, 100, 500]
    assert power_law_fit(ns, [1 / n for n in ns]) == pytest.approx(-1.0, abs=1e-10)
    assert power_law_fit(ns, [3.0] * 4) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ParameterError):
        power_law_fit(ns, [1, 0, 1, 1])
    with pytest.raises(ParameterError):
        power_law_fit([1, 2], [1, 1])


def test_table_slopes_from_printed_cells():
    ns = [10, 50, 100, 200, 500]
    assert power_law_fit(ns, [0.0389, 0.0082, 0.0052, 0.0030, 0.0014]) == pytest.approx(-0.81, abs=0.1)
    assert power_law_fit(ns, [0.0240, 0.0016, 0.00053, 0.00015, 0.000028]) == pytest.approx(-1.75, abs=0.15)


@pytest.fixture(scope="module")
def agg_rows():
    return aggregation_comparison(seed=0)


def test_mean_beats_second_order_for_large_n(agg_rows):
    by_n = {r["n"]: r for r in agg_rows}
    for n in (50, 100, 200, 500):
        assert by_n[n]["gap_mean"] > by_n[n]["gap_second_order"]
    assert by_n[500]["ratio"] > by_n[50]["ratio"]


def test_dimension_scan_shape():
    rows = dimension_scan((1, 2), n=20, contexts=300, seed=1)
    assert [r["posterior_dof"] for r in rows] == [1, 3]
    assert rows[0]["d_eff"] == 1.0

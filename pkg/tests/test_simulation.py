import json

import numpy as np
import pytest

from bknni.simulation import (PARAMETERS, SimReport, StudyConfig, StudyError,
                              calibrate_beta, gen_response,
                              report_diagnostics, report_to_csv,
                              report_to_markdown, response_propensity,
                              run_study)


class TestCalibrateBeta:
    def test_constant_covariate_closed_form(self):
        # with x identically c, rate 0.5 needs 1 - beta*c = 0
        c = 4.0
        beta = calibrate_beta(np.full(50, c), 0.5)
        assert beta == pytest.approx(1.0 / c, abs=1e-9)

    def test_hits_target_rate_on_mu284(self, mu284_case1):
        x = mu284_case1.aux[:, 1]
        beta = calibrate_beta(x, 0.7)
        assert beta > 0
        assert np.mean(response_propensity(x, beta)) == pytest.approx(0.7,
                                                                      abs=1e-9)

    def test_monotone_in_target(self, mu284_case1):
        x = mu284_case1.aux[:, 1]
        betas = [calibrate_beta(x, r) for r in (0.5, 0.7, 0.9)]
        assert betas[0] < betas[1] < betas[2]

    def test_bad_target(self):
        with pytest.raises(StudyError):
            calibrate_beta(np.ones(5), 1.5)


class TestResponsePropensity:
    def test_formula(self):
        assert response_propensity(np.array([2.0]), 0.5)[0] == \
            pytest.approx(0.5)
        assert response_propensity(np.array([0.0]), 1.0)[0] == \
            pytest.approx(1.0 / (1.0 + np.e))

    def test_increasing_in_x(self):
        x = np.linspace(0, 10, 11)
        theta = response_propensity(x, 0.8)
        assert np.all(np.diff(theta) > 0)


class TestGenResponse:
    def test_empirical_rate(self):
        theta = np.full(284, 0.7)
        rng = np.random.default_rng(0)
        rates = [gen_response(theta, rng)[0].mean() for _ in range(300)]
        se = np.sqrt(0.7 * 0.3 / 284)
        assert abs(np.mean(rates) - 0.7) <= 4.0 * se / np.sqrt(300)

    def test_mar_pattern_on_mu284(self, mu284_case1):
        x = mu284_case1.aux[:, 1]
        theta = np.clip(response_propensity(x, calibrate_beta(x, 0.7)),
                        1e-12, 1 - 1e-12)
        rng = np.random.default_rng(1)
        resp = np.mean([gen_response(theta, rng)[0] for _ in range(200)],
                       axis=0)
        # larger municipalities respond more often
        assert np.corrcoef(resp, x)[0, 1] > 0.3

    def test_bounds_enforced(self):
        with pytest.raises(StudyError):
            gen_response(np.array([0.5, 1.0]), np.random.default_rng(0))

    def test_min_respondents_redraw(self):
        theta = np.full(6, 0.5)
        resp, redraws = gen_response(theta, np.random.default_rng(0),
                                     min_respondents=5)
        assert resp.sum() >= 5 and redraws >= 0


@pytest.fixture(scope="module")
def tiny_report():
    cfg = StudyConfig(case=1, m_r=3, m_i=4, seed=11)
    return run_study(cfg)


class TestRunStudy:
    def test_deterministic(self, tiny_report):
        again = run_study(StudyConfig(case=1, m_r=3, m_i=4, seed=11))
        for key, meas in tiny_report.measures.items():
            assert meas == again.measures[key], key
        for m in tiny_report.estimates:
            np.testing.assert_array_equal(tiny_report.estimates[m],
                                          again.estimates[m])

    def test_deterministic_methods_have_zero_rriv(self, tiny_report):
        for m in ("nni", "pmm"):
            for p in PARAMETERS:
                assert tiny_report.measures[(m, p)]["rriv"] <= 1e-12

    def test_mse_decomposition(self, tiny_report):
        # RRMSE^2 * theta^2 = bias^2 + variance of the raw estimates
        for m in ("bknni", "srs"):
            vals = tiny_report.estimates[m][:, :, 0]
            th = tiny_report.true_values["total"]
            mse = np.mean((vals - th) ** 2)
            decomp = (np.mean(vals) - th) ** 2 + np.var(vals)
            assert mse == pytest.approx(decomp, rel=1e-9)
            assert tiny_report.measures[(m, "total")]["rrmse"] == \
                pytest.approx(np.sqrt(mse) / th, rel=1e-12)

    def test_iv_definition(self, tiny_report):
        # RRIV uses the mean over response sets of the within-set
        # variance with divisor M_I - 1
        vals = tiny_report.estimates[("bknni")][:, :, 0]
        iv = np.mean([np.var(vals[r], ddof=1) for r in range(vals.shape[0])])
        th = tiny_report.true_values["total"]
        assert tiny_report.measures[("bknni", "total")]["rriv"] == \
            pytest.approx(np.sqrt(iv) / th, rel=1e-12)

    def test_rb_definition(self, tiny_report):
        vals = tiny_report.estimates["knni"][:, :, 0]
        th = tiny_report.true_values["total"]
        assert tiny_report.measures[("knni", "total")]["rb"] == \
            pytest.approx((vals.mean() - th) / th, rel=1e-12)

    def test_methods_share_response_sets(self):
        # restricting the method list must not change another method's path
        a = run_study(StudyConfig(case=1, m_r=2, m_i=2, seed=5,
                                  methods=("srs",)))
        b = run_study(StudyConfig(case=1, m_r=2, m_i=2, seed=5,
                                  methods=("srs", "knni")))
        np.testing.assert_array_equal(a.estimates["srs"], b.estimates["srs"])

    def test_config_validation(self):
        with pytest.raises(StudyError):
            StudyConfig(case=3)
        with pytest.raises(StudyError):
            StudyConfig(m_r=0)
        with pytest.raises(StudyError):
            StudyConfig(mean_response_rate=1.2)
        with pytest.raises(StudyError):
            StudyConfig(methods=("bogus",))


class TestReports:
    def test_csv_shape(self, tiny_report):
        text = report_to_csv(tiny_report)
        lines = text.strip().splitlines()
        assert lines[0] == "method,parameter,RB,RRMSE,RRIV"
        n_methods = len(tiny_report.config.methods)
        assert len(lines) == 1 + 4 * n_methods + 1 + 2
        assert lines[-2] == "case,mean_var_app,mc_iv,ratio"

    def test_markdown_shape(self, tiny_report):
        text = report_to_markdown(tiny_report)
        assert "| Method | RB | RRMSE | RRIV |" in text
        assert "## Imputation-variance approximation (total)" in text
        assert "BKNNI" in text

    def test_diagnostics_json(self, tiny_report):
        payload = json.loads(report_diagnostics(tiny_report))
        assert payload["case"] == 1
        assert payload["m_r"] == 3
        assert "var_ratio" in payload and "fallback_count" in payload

import math

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from scripts.evaluation.reports import (agreement_frame, boxplot_frame, format_mean_sd, read_csv,
                                        summarize_metrics, write_anova, write_csv)
from scripts.evaluation.statistics import (LOA_Z, PairedSeries, agreement_report, anova_from_sums,
                                           anova_oneway, bland_altman, boxplot_summary, f_sf,
                                           paired_t_test, pearson_fit, rpc_from_limits)
from scripts.utils.errors import ContractViolation, FormatError


@pytest.fixture
def volumes():
    """
    Provides a paired series of automatic and manual volumes (mL).
    """
    rng = np.random.default_rng(2)
    manual = rng.uniform(40.0, 160.0, size=30)
    automatic = manual + rng.normal(-2.0, 8.0, size=30)
    return PairedSeries(automatic, manual, parameter="volume", units="mL")


class TestPairedSeries:
    """
    Test cases for paired series validation.
    """

    def test_length_mismatch(self):
        """
        Series of different length are rejected.
        """
        with pytest.raises(ContractViolation):
            PairedSeries(np.ones(3), np.ones(4))

    def test_too_short(self):
        """
        A single pair is rejected.
        """
        with pytest.raises(ContractViolation):
            PairedSeries(np.ones(1), np.ones(1))


class TestBlandAltman:
    """
    Test cases for bias, limits of agreement, RPC and CV.
    """

    def test_perfect_agreement(self):
        """
        auto = man gives zero bias, SD and RPC.
        """
        values = np.array([1.0, 2.0, 5.0])
        result = bland_altman(PairedSeries(values, values.copy()))
        assert (result.bias, result.sd, result.rpc) == (0.0, 0.0, 0.0)
        assert result.cv == 0.0

    def test_definitions(self, volumes):
        """
        Bias, sample SD, limits and CV follow their definitions.
        """
        d = volumes.auto - volumes.man
        result = bland_altman(volumes)
        assert result.bias == pytest.approx(d.mean())
        assert result.sd == pytest.approx(d.std(ddof=1))
        assert result.loa_low == pytest.approx(d.mean() - 1.96 * d.std(ddof=1))
        assert result.loa_high == pytest.approx(d.mean() + 1.96 * d.std(ddof=1))
        assert result.cv == pytest.approx(d.std(ddof=1) / (volumes.auto.mean() + volumes.man.mean()) * 100)

    def test_rpc_is_half_width(self, volumes):
        """
        RPC equals the half-width of the limits of agreement.
        """
        result = bland_altman(volumes)
        assert result.rpc == pytest.approx((result.loa_high - result.loa_low) / 2.0, rel=1e-15)
        assert result.rpc == pytest.approx(LOA_Z * result.sd)

    def test_halved_denominator_doubles_cv(self, volumes):
        """
        The conventional denominator gives twice the literal CV.
        """
        assert bland_altman(volumes, halved_denominator=True).cv == \
            pytest.approx(2.0 * bland_altman(volumes).cv)

    def test_zero_denominator(self):
        """
        A zero mean leaves CV undefined instead of raising.
        """
        result = bland_altman(PairedSeries(np.array([1.0, -1.0]), np.array([-1.0, 1.0])))
        assert result.cv is None

    @pytest.mark.parametrize("low,high,expected", [(-24.28, 19.35, 21.815), (-14.79, 13.01, 13.90)])
    def test_reference_limits(self, low, high, expected):
        """
        Reported limits of agreement reproduce the reported RPC.
        """
        assert rpc_from_limits(low, high) == pytest.approx(expected, abs=5e-3)


class TestCorrelation:
    """
    Test cases for the least-squares fit and paired test.
    """

    def test_identity(self):
        """
        auto = man gives slope 1, intercept 0 and R = 1.
        """
        man = np.array([1.0, 4.0, 2.0, 8.0])
        fit = pearson_fit(PairedSeries(man.copy(), man))
        assert fit.slope == pytest.approx(1.0)
        assert fit.intercept == pytest.approx(0.0, abs=1e-12)
        assert fit.r == pytest.approx(1.0)

    def test_negated(self):
        """
        auto = -man gives R = -1.
        """
        man = np.array([1.0, 2.0, 3.0])
        assert pearson_fit(PairedSeries(-man, man)).r == pytest.approx(-1.0)

    def test_exact_line(self):
        """
        auto = 2 man + 3 over man = (1, 2, 3) gives slope 2 and intercept 3.
        """
        man = np.array([1.0, 2.0, 3.0])
        fit = pearson_fit(PairedSeries(2 * man + 3, man))
        assert (fit.slope, fit.intercept) == (pytest.approx(2.0), pytest.approx(3.0))
        assert fit.r == pytest.approx(1.0)

    def test_constant_manual(self):
        """
        Constant manual values are rejected.
        """
        with pytest.raises(ContractViolation):
            pearson_fit(PairedSeries(np.array([1.0, 2.0]), np.array([3.0, 3.0])))

    def test_paired_t(self, volumes):
        """
        The p-value matches scipy's paired t-test; constant differences are handled.
        """
        assert paired_t_test(volumes) == pytest.approx(stats.ttest_rel(volumes.auto, volumes.man).pvalue)
        same = np.array([1.0, 2.0, 3.0])
        assert paired_t_test(PairedSeries(same, same.copy())) == 1.0
        assert paired_t_test(PairedSeries(same + 1.0, same)) == 0.0

    def test_report_bundle(self, volumes):
        """
        The agreement report carries every statistic and flattens to a row.
        """
        report = agreement_report(volumes)
        row = report.to_row()
        assert row["parameter"] == "volume"
        assert row["n"] == 30
        assert row["rpc"] == pytest.approx(bland_altman(volumes).rpc)
        assert row["r"] == pytest.approx(pearson_fit(volumes).r)
        frame = agreement_frame([report])
        assert list(frame["parameter"]) == ["volume"]


class TestAnova:
    """
    Test cases for the one-way ANOVA and the F tail.
    """

    def test_reference_table(self):
        """
        SS 3.524 / 2.198 with df 3 / 12 gives MS 1.17 / 0.183, F ~ 6.41, p ~ 0.0077.
        """
        table = anova_from_sums(3.524, 3, 2.198, 12)
        assert table.ms_between == pytest.approx(1.17, abs=5e-3)
        assert table.ms_within == pytest.approx(0.183, abs=5e-4)
        assert table.f == pytest.approx(6.41, abs=5e-3)
        assert table.p == pytest.approx(0.0077, abs=2e-4)
        assert table.df_total == 15
        assert table.ss_total == pytest.approx(5.722)

    def test_identical_groups(self):
        """
        Identical groups give SS_between = 0, F = 0 and p = 1.
        """
        table = anova_oneway([[1.0, 2.0, 3.0]] * 3)
        assert table.ss_between == pytest.approx(0.0, abs=1e-15)
        assert table.f == pytest.approx(0.0, abs=1e-12)
        assert table.p == pytest.approx(1.0)

    def test_decomposition(self):
        """
        SS_between + SS_within equals the total sum of squares and matches scipy's F.
        """
        rng = np.random.default_rng(0)
        groups = [rng.normal(loc, 1.0, size=n) for loc, n in ((0.0, 5), (0.8, 7), (1.5, 4))]
        table = anova_oneway(groups)
        values = np.concatenate(groups)
        assert table.ss_total == pytest.approx(((values - values.mean()) ** 2).sum())
        assert table.ms_between == pytest.approx(table.ss_between / 2)
        reference = stats.f_oneway(*groups)
        assert table.f == pytest.approx(reference.statistic)
        assert table.p == pytest.approx(reference.pvalue)

    def test_two_groups_t_squared(self):
        """
        With two groups F equals the square of the pooled two-sample t statistic.
        """
        x = np.array([2.1, 3.4, 1.9, 4.0, 2.8])
        y = np.array([3.9, 4.4, 5.1, 3.7, 4.8])
        n, m = len(x), len(y)
        pooled = ((n - 1) * x.var(ddof=1) + (m - 1) * y.var(ddof=1)) / (n + m - 2)
        t = (x.mean() - y.mean()) / math.sqrt(pooled * (1.0 / n + 1.0 / m))
        assert anova_oneway([x, y]).f == pytest.approx(t ** 2)

    def test_invalid(self):
        """
        Zero within-group df, one group or negative sums are rejected.
        """
        with pytest.raises(ContractViolation):
            anova_oneway([[1.0], [2.0]])
        with pytest.raises(ContractViolation):
            anova_oneway([[1.0, 2.0]])
        with pytest.raises(ContractViolation):
            anova_from_sums(-1.0, 2, 1.0, 4)

    def test_f_tail_examples(self):
        """
        P(X > 0) = 1, P(X > 1) = 0.5 for d1 = d2, and F = 6.41 at (3, 12) ~ 0.0077.
        """
        assert f_sf(0.0, 3, 12) == 1.0
        for d in (1, 4, 30):
            assert f_sf(1.0, d, d) == pytest.approx(0.5, abs=1e-12)
        assert f_sf(6.41, 3, 12) == pytest.approx(0.0077, abs=2e-4)
        assert f_sf(math.inf, 2, 5) == 0.0

    @pytest.mark.parametrize("f", [0.1, 0.7, 1.3, 3.0, 8.0])
    @pytest.mark.parametrize("d1,d2", [(1, 4), (3, 12), (5, 7), (10, 30)])
    def test_f_tail_against_oracles(self, f, d1, d2):
        """
        The tail matches scipy.stats.f.sf and a numeric integration of the density.
        """
        assert f_sf(f, d1, d2) == pytest.approx(stats.f.sf(f, d1, d2), abs=1e-8)
        head, _ = integrate.quad(stats.f(d1, d2).pdf, 0.0, f, limit=200)
        assert f_sf(f, d1, d2) == pytest.approx(1.0 - head, abs=1e-6)

    def test_f_tail_invalid(self):
        """
        Negative F or a degree of freedom below 1 is rejected.
        """
        with pytest.raises(ContractViolation):
            f_sf(-0.1, 2, 3)
        with pytest.raises(ContractViolation):
            f_sf(1.0, 0, 3)

    def test_table_text(self, tmp_path):
        """
        The text table lists the three sources.
        """
        path = tmp_path / "anova.txt"
        write_anova(anova_from_sums(3.524, 3, 2.198, 12), path)
        text = path.read_text(encoding="utf-8")
        for source in ("Between groups", "Within groups", "Total", "p-value"):
            assert source in text
        assert "6.41" in text


class TestSummaries:
    """
    Test cases for box-plot and CSV summaries.
    """

    def test_boxplot(self):
        """
        Quartiles and Tukey whiskers of 1..9 plus one outlier.
        """
        summary = boxplot_summary([1, 2, 3, 4, 5, 6, 7, 8, 9, 100])
        assert summary.median == pytest.approx(5.5)
        assert summary.q1 == pytest.approx(3.25)
        assert summary.q3 == pytest.approx(7.75)
        assert summary.whisker_low == 1.0
        assert summary.whisker_high == 9.0
        assert summary.n_outliers == 1
        frame = boxplot_frame({"volume": summary})
        assert list(frame.columns[:2]) == ["parameter", "q1"]

    def test_boxplot_empty(self):
        """
        An empty series has no box plot.
        """
        with pytest.raises(ContractViolation):
            boxplot_summary([])

    def test_mean_sd(self):
        """
        'mean ± SD' uses the sample SD and skips NaN.
        """
        assert format_mean_sd([1.0, 3.0, float("nan")], digits=2) == "2.00 ± 1.41"

    def test_summarize_metrics(self):
        """
        One summary row per metric.
        """
        frame = pd.DataFrame({"dice": [0.9, 0.8], "hausdorff": [2.0, np.nan],
                              "jaccard": [0.8, 0.7], "mad": [1.0, 1.0]})
        summary = summarize_metrics(frame).set_index("metric")
        assert summary.loc["dice", "mean"] == pytest.approx(0.85)
        assert summary.loc["hausdorff", "n"] == 1
        assert summary.loc["mad", "sd"] == 0.0

    def test_csv_round_trip(self, tmp_path):
        """
        A written CSV reads back and missing columns are reported.
        """
        path = tmp_path / "nested" / "table.csv"
        write_csv(pd.DataFrame({"id": ["a", "b"], "value": [0.5, 1.25]}), path)
        frame = read_csv(path, ["id", "value"])
        assert list(frame["value"]) == [0.5, 1.25]
        with pytest.raises(FormatError):
            read_csv(path, ["id", "missing"])

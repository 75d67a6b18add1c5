"""
Agreement and variance statistics for automatic vs manual measurements.

Bland-Altman analysis (bias, limits of agreement, reproducibility coefficient,
coefficient of variation), least-squares correlation, one-way ANOVA with an
F-distribution tail from the regularized incomplete beta function, paired t-test and
box-plot summaries.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import special, stats

from scripts.utils.errors import ContractViolation

logger = logging.getLogger(__name__)

LOA_Z = 1.96


@dataclass
class PairedSeries:
    """
    Paired automatic / manual values of one clinical parameter.

    Attributes:
        auto (np.ndarray): Automatic measurements.
        man (np.ndarray): Manual (reference) measurements.
        parameter (str): "volume", "area", "length" or "EF".
        units (str): Units of the values.
    """

    auto: np.ndarray
    man: np.ndarray
    parameter: str = ""
    units: str = ""

    def __post_init__(self):
        self.auto = np.asarray(self.auto, dtype=np.float64).ravel()
        self.man = np.asarray(self.man, dtype=np.float64).ravel()
        if len(self.auto) != len(self.man):
            raise ContractViolation(f"{self.parameter}: {len(self.auto)} auto vs {len(self.man)} manual values")
        if len(self.auto) < 2:
            raise ContractViolation(f"{self.parameter}: need at least 2 pairs, got {len(self.auto)}")

    @property
    def differences(self) -> np.ndarray:
        return self.auto - self.man


@dataclass
class BlandAltman:
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    rpc: float
    cv: Optional[float]


@dataclass
class PearsonFit:
    slope: float
    intercept: float
    r: float


@dataclass
class AgreementReport:
    """Per-parameter bundle written as one row of the agreement report."""

    parameter: str
    units: str
    n: int
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    rpc: float
    cv: Optional[float]
    slope: float
    intercept: float
    r: float
    p_value: float

    def to_row(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class BoxplotSummary:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    n_outliers: int


@dataclass
class AnovaTable:
    """
    One-way ANOVA decomposition.

    MS = SS / df for each source, F = MS_between / MS_within, p = P(X > F) with
    X ~ F(df_between, df_within).
    """

    ss_between: float
    df_between: int
    ss_within: float
    df_within: int
    ms_between: float
    ms_within: float
    f: float
    p: float

    @property
    def ss_total(self) -> float:
        return self.ss_between + self.ss_within

    @property
    def df_total(self) -> int:
        return self.df_between + self.df_within

    def to_text(self) -> str:
        """Plain-text table with Source, SS, df, MS, F and p-value columns."""
        header = f"{'Source':<16}{'SS':>12}{'df':>6}{'MS':>12}{'F':>10}{'p-value':>10}"
        rows = [
            header,
            "-" * len(header),
            f"{'Between groups':<16}{self.ss_between:>12.4f}{self.df_between:>6d}"
            f"{self.ms_between:>12.4f}{self.f:>10.3f}{self.p:>10.4f}",
            f"{'Within groups':<16}{self.ss_within:>12.4f}{self.df_within:>6d}{self.ms_within:>12.4f}",
            f"{'Total':<16}{self.ss_total:>12.4f}{self.df_total:>6d}",
        ]
        return "\n".join(rows) + "\n"


def bland_altman(series: PairedSeries, halved_denominator: bool = False) -> BlandAltman:
    """
    Bland-Altman statistics of auto - man.

    SD is the sample (n - 1) standard deviation of the differences; limits of
    agreement are bias +- 1.96 SD and RPC = 1.96 SD. CV = SD / (mean(auto) +
    mean(man)) * 100, or with the denominator halved when `halved_denominator`.
    A zero denominator leaves CV undefined (None) and logs a warning.
    """
    d = series.differences
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    denominator = float(series.auto.mean() + series.man.mean())
    if halved_denominator:
        denominator /= 2.0
    if denominator == 0:
        logger.warning(f"{series.parameter}: CV undefined (zero mean)")
        cv = None
    else:
        cv = sd / denominator * 100.0
    return BlandAltman(bias, sd, bias - LOA_Z * sd, bias + LOA_Z * sd, LOA_Z * sd, cv)


def rpc_from_limits(loa_low: float, loa_high: float) -> float:
    """Reproducibility coefficient as the half-width of reported limits of agreement."""
    return (loa_high - loa_low) / 2.0


def pearson_fit(series: PairedSeries) -> PearsonFit:
    """
    Least-squares line auto = slope * man + intercept and Pearson R.

    Raises:
        ContractViolation: If the manual values are constant.
    """
    if np.ptp(series.man) == 0:
        raise ContractViolation(f"{series.parameter}: manual values are constant")
    fit = stats.linregress(series.man, series.auto)
    return PearsonFit(float(fit.slope), float(fit.intercept), float(fit.rvalue))


def paired_t_test(series: PairedSeries) -> float:
    """
    Two-sided paired t-test p-value of auto vs man.

    Used as a labelled approximation for reproducibility p-values. Constant
    differences give p = 1 when they are all zero and p = 0 otherwise.
    """
    d = series.differences
    if np.ptp(d) == 0:
        return 1.0 if d[0] == 0 else 0.0
    return float(stats.ttest_rel(series.auto, series.man).pvalue)


def agreement_report(series: PairedSeries, halved_denominator: bool = False) -> AgreementReport:
    """Bland-Altman, correlation and paired-test statistics of one parameter."""
    ba = bland_altman(series, halved_denominator)
    fit = pearson_fit(series)
    return AgreementReport(
        parameter=series.parameter,
        units=series.units,
        n=len(series.auto),
        bias=ba.bias,
        sd=ba.sd,
        loa_low=ba.loa_low,
        loa_high=ba.loa_high,
        rpc=ba.rpc,
        cv=ba.cv,
        slope=fit.slope,
        intercept=fit.intercept,
        r=fit.r,
        p_value=paired_t_test(series),
    )


def f_sf(f: float, d1: float, d2: float) -> float:
    """
    Upper tail P(X > f) of the F(d1, d2) distribution.

    Evaluated as the regularized incomplete beta I_x(d2/2, d1/2) at
    x = d2 / (d2 + d1 f).

    Raises:
        ContractViolation: If f < 0 or a degree of freedom is below 1.
    """
    if f < 0 or d1 < 1 or d2 < 1:
        raise ContractViolation(f"f_sf needs f >= 0 and d1, d2 >= 1, got {f}, {d1}, {d2}")
    if math.isinf(f):
        return 0.0
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def anova_from_sums(ss_between: float, df_between: int, ss_within: float, df_within: int) -> AnovaTable:
    """
    ANOVA table from precomputed sums of squares and degrees of freedom.

    Raises:
        ContractViolation: If df_within or df_between is not positive, or a sum of
            squares is negative.
    """
    if df_within <= 0 or df_between <= 0:
        raise ContractViolation(f"degrees of freedom must be positive, got {df_between}, {df_within}")
    if ss_between < 0 or ss_within < 0:
        raise ContractViolation("sums of squares must be non-negative")
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    if ms_within == 0:
        f = 0.0 if ms_between == 0 else math.inf
    else:
        f = ms_between / ms_within
    return AnovaTable(
        ss_between=float(ss_between),
        df_between=int(df_between),
        ss_within=float(ss_within),
        df_within=int(df_within),
        ms_between=float(ms_between),
        ms_within=float(ms_within),
        f=float(f),
        p=f_sf(f, df_between, df_within),
    )


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaTable:
    """
    One-way ANOVA over groups of observations.

    Args:
        groups: At least 2 groups, each with at least one value.

    Raises:
        ContractViolation: On fewer than 2 groups, an empty group, or no within-group
            degrees of freedom.
    """
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(arrays) < 2:
        raise ContractViolation(f"ANOVA needs at least 2 groups, got {len(arrays)}")
    if any(len(a) == 0 for a in arrays):
        raise ContractViolation("ANOVA groups must be non-empty")
    values = np.concatenate(arrays)
    grand_mean = values.mean()
    ss_between = float(sum(len(a) * (a.mean() - grand_mean) ** 2 for a in arrays))
    ss_within = float(sum(((a - a.mean()) ** 2).sum() for a in arrays))
    return anova_from_sums(ss_between, len(arrays) - 1, ss_within, len(values) - len(arrays))


def boxplot_summary(values: Sequence[float]) -> BoxplotSummary:
    """
    Quartiles and Tukey whiskers (most extreme values within 1.5 IQR of the box).

    Raises:
        ContractViolation: If `values` is empty.
    """
    data = np.asarray(values, dtype=np.float64).ravel()
    if data.size == 0:
        raise ContractViolation("box plot of an empty series")
    q1, median, q3 = np.percentile(data, [25, 50, 75])
    reach = 1.5 * (q3 - q1)
    inside = data[(data >= q1 - reach) & (data <= q3 + reach)]
    return BoxplotSummary(
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        n_outliers=int(data.size - inside.size),
    )

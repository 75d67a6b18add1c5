"""
CLI verb implementations: synth, train, eval, measure, report.

Each command reads its inputs, writes CSV / text / checkpoint artifacts into an
output directory and returns the in-memory results for callers and tests.
"""
import logging
import math
import os
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from scripts.dataset.dataset_maker import DatasetMaker, SampleStore, resize_image, resize_mask
from scripts.dataset.trainer import FoldLog, Trainer
from scripts.evaluation.metrics import dice, hausdorff, jaccard, mad
from scripts.evaluation.reports import (agreement_frame, boxplot_frame, read_csv, summarize_metrics,
                                        write_anova, write_csv)
from scripts.evaluation.statistics import (PairedSeries, agreement_report, anova_from_sums, anova_oneway,
                                           boxplot_summary)
from scripts.measurement.contour import extract_contour
from scripts.measurement.lv_measures import ejection_fraction, measure_mask
from scripts.networks.architectures import Model, forward_segment
from scripts.preprocessing.niblack import compose_input
from scripts.preprocessing.sample import ImageSample
from scripts.utils.checkpoint import checkpoint_read
from scripts.utils.config import RunConfig
from scripts.utils.errors import ContractViolation

logger = logging.getLogger(__name__)

MEASUREMENT_COLUMNS = ["id", "subject", "phase", "D_cm", "S_cm2", "V_ml", "flag"]
EF_COLUMNS = ["subject", "V_ED_ml", "V_ES_ml", "EF_percent", "flag"]
METRIC_ROW_COLUMNS = ["id", "subject", "phase", "dice", "hausdorff", "jaccard", "mad", "inference_ms"]
# parameter -> (measurement column, units)
REPORT_PARAMETERS = {"volume": ("V_ml", "mL"), "area": ("S_cm2", "cm2"), "length": ("D_cm", "cm")}


def synth_command(out_dir: str, n_subjects: int, size: int = 64, seed: int = 0) -> pd.DataFrame:
    return DatasetMaker().synthesize(out_dir, n_subjects, size, seed)


def train_command(config: RunConfig, show_progress: bool = True) -> List[FoldLog]:
    """
    k-fold training on the configured data source.

    Writes config.json, fold<k>.ckpt, fold<k>_log.csv and folds.json into
    `config.output_dir`.
    """
    store = SampleStore(config.data_dir, config.input_size, config.niblack_k, config.seed)
    os.makedirs(config.output_dir, exist_ok=True)
    config.save(os.path.join(config.output_dir, "config.json"))
    logger.info(f"train: {config.arch}, {len(store.samples)} samples from {config.data_dir}")
    return Trainer(config, show_progress=show_progress).cross_validate(store.samples, config.output_dir)


def mask_metrics(predicted: np.ndarray, truth: np.ndarray, calibration: Optional[float] = None) -> Dict[str, float]:
    """
    Dice, Jaccard, and contour Hausdorff / MAD (mm when calibrated) of one mask pair.

    Distance metrics are NaN when either mask is empty.
    """
    row = {"dice": dice(predicted, truth), "jaccard": jaccard(predicted, truth)}
    if np.any(predicted) and np.any(truth):
        auto, manual = extract_contour(predicted), extract_contour(truth)
        row["hausdorff"] = hausdorff(auto, manual, calibration)
        row["mad"] = mad(auto, manual, calibration)
    else:
        row["hausdorff"] = row["mad"] = math.nan
    return row


def segment_sample(model: Model, sample: ImageSample, niblack_k: float = 2.0) -> np.ndarray:
    """Segment a sample at N x N and resize the prediction back to the sample's shape."""
    h, w = sample.image.shape
    if (h, w) != (model.input_size, model.input_size):
        image = resize_image(sample.image, model.input_size)
    else:
        image = sample.image
    predicted = forward_segment(model, compose_input(image, niblack_k, model.profile.dtype))
    return resize_mask(predicted, (h, w))


def evaluate_command(checkpoint_path: str, data_source: str, out_dir: str,
                     config: Optional[RunConfig] = None, expected_arch: Optional[str] = None,
                     show_progress: bool = True) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Per-image metrics of a checkpoint against ground truth.

    Writes metrics.csv (one row per image) and summary.csv ("mean ± SD" per metric).
    Predictions are made at N x N and resized back to each image's own extent.

    Raises:
        FormatError: If the checkpoint is malformed or not of `expected_arch`.
    """
    config = config or RunConfig()
    model = checkpoint_read(checkpoint_path, expected_arch)
    samples = SampleStore.load(data_source, model.input_size, config.seed)
    rows = []
    for sample in tqdm(samples, desc="eval", disable=not show_progress):
        start = time.perf_counter()
        predicted = segment_sample(model, sample, config.niblack_k)
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        logger.debug(f"{sample.sample_id}: inference {elapsed_ms:.1f} ms")
        row = {"id": sample.sample_id, "subject": sample.subject_id, "phase": sample.phase}
        row.update(mask_metrics(predicted, sample.mask, sample.calibration))
        row["inference_ms"] = elapsed_ms
        rows.append(row)
    metrics = pd.DataFrame(rows, columns=METRIC_ROW_COLUMNS)
    summary = summarize_metrics(metrics)
    write_csv(metrics, os.path.join(out_dir, "metrics.csv"))
    write_csv(summary, os.path.join(out_dir, "summary.csv"))
    if len(metrics):
        logger.info(f"mean inference time {metrics['inference_ms'].mean():.1f} ms / image")
    return metrics, summary


def measure_samples(samples: Sequence[ImageSample],
                    masks: Optional[Sequence[np.ndarray]] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    LV measurements per mask and EF per subject.

    Args:
        samples: Frames with calibration, phase and subject id.
        masks: Masks to measure; the samples' own masks by default.

    Returns:
        Tuple[pd.DataFrame, pd.DataFrame]: (measurement rows, EF rows).
    """
    masks = masks if masks is not None else [s.mask for s in samples]
    rows = []
    volumes: Dict[str, Dict[str, float]] = {}
    for sample, mask in zip(samples, masks):
        m = measure_mask(mask, sample.calibration, sample.phase)
        rows.append({"id": sample.sample_id, "subject": sample.subject_id, "phase": sample.phase,
                     "D_cm": m.length_cm, "S_cm2": m.area_cm2, "V_ml": m.volume_ml, "flag": m.flag or ""})
        if sample.phase in ("ED", "ES"):
            volumes.setdefault(sample.subject_id, {})[sample.phase] = m.volume_ml

    ef_rows = []
    for subject in sorted(volumes):
        pair = volumes[subject]
        ved, ves = pair.get("ED"), pair.get("ES")
        if ved is None or ves is None:
            logger.warning(f"{subject}: no ED/ES pair, EF omitted")
            ef_rows.append({"subject": subject, "V_ED_ml": ved, "V_ES_ml": ves,
                            "EF_percent": math.nan, "flag": "unmatched ED/ES"})
            continue
        if not (ved > 0 and np.isfinite(ves)):
            ef_rows.append({"subject": subject, "V_ED_ml": ved, "V_ES_ml": ves,
                            "EF_percent": math.nan, "flag": "volume unavailable"})
            continue
        flag = "V_ES > V_ED" if ves > ved else ""
        ef_rows.append({"subject": subject, "V_ED_ml": ved, "V_ES_ml": ves,
                        "EF_percent": ejection_fraction(ved, ves), "flag": flag})
    return pd.DataFrame(rows, columns=MEASUREMENT_COLUMNS), pd.DataFrame(ef_rows, columns=EF_COLUMNS)


def measure_command(data_source: str, out_dir: str, config: Optional[RunConfig] = None,
                    checkpoint_path: Optional[str] = None,
                    mask_dir: Optional[str] = None) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Measure ground-truth masks, masks from `mask_dir`, or masks predicted by a checkpoint.

    Writes measurements.csv and ejection_fraction.csv.
    """
    config = config or RunConfig()
    if mask_dir is not None:
        samples = SampleStore.load_directory(data_source, mask_dir)
    else:
        samples = SampleStore.load(data_source, config.input_size, config.seed)
    masks = None
    if checkpoint_path is not None:
        model = checkpoint_read(checkpoint_path)
        masks = [segment_sample(model, s, config.niblack_k) for s in samples]
    measurements, ef = measure_samples(samples, masks)
    write_csv(measurements, os.path.join(out_dir, "measurements.csv"))
    write_csv(ef, os.path.join(out_dir, "ejection_fraction.csv"))
    flagged = int((measurements["flag"].astype(str) != "").sum())
    logger.info(f"measured {len(measurements)} masks, {flagged} flagged")
    return measurements, ef


def _paired(auto: pd.DataFrame, manual: pd.DataFrame, key: str) -> pd.DataFrame:
    auto_ids, manual_ids = set(auto[key].astype(str)), set(manual[key].astype(str))
    if auto_ids != manual_ids:
        offending = sorted(auto_ids ^ manual_ids)
        raise ContractViolation(f"{key} mismatch between automatic and manual CSVs: {offending}")
    merged = auto.astype({key: str}).merge(manual.astype({key: str}), on=key, suffixes=("_auto", "_man"))
    return merged.sort_values(key).reset_index(drop=True)


def _parameter_series(merged: pd.DataFrame, column: str, parameter: str, units: str) -> Optional[PairedSeries]:
    auto = merged[f"{column}_auto"].astype(np.float64)
    man = merged[f"{column}_man"].astype(np.float64)
    keep = auto.notna() & man.notna()
    if (~keep).any():
        logger.warning(f"{parameter}: {int((~keep).sum())} rows without a value skipped")
    if keep.sum() < 2:
        logger.warning(f"{parameter}: fewer than 2 pairs, no agreement statistics")
        return None
    return PairedSeries(auto[keep].to_numpy(), man[keep].to_numpy(), parameter, units)


def report_command(auto_csv: str, manual_csv: str, out_dir: str,
                   groups: Optional[Sequence[str]] = None, group_metric: str = "dice",
                   anova_sums: Optional[Sequence[float]] = None,
                   halved_cv: bool = False) -> Dict[str, object]:
    """
    Agreement report of automatic vs manual measurements.

    Reads measurements.csv files (and ejection_fraction.csv next to them, when both
    exist), writes agreement.csv and boxplot.csv; writes anova.txt when metric CSVs of
    two or more methods (`groups`) or precomputed sums (SS_b, df_b, SS_w, df_w) are
    given.

    Raises:
        ContractViolation: If the id sets of the two CSVs differ (offending ids listed).
    """
    auto = read_csv(auto_csv, MEASUREMENT_COLUMNS[:6])
    manual = read_csv(manual_csv, MEASUREMENT_COLUMNS[:6])
    merged = _paired(auto, manual, "id")

    series: List[PairedSeries] = []
    for parameter, (column, units) in REPORT_PARAMETERS.items():
        s = _parameter_series(merged, column, parameter, units)
        if s is not None:
            series.append(s)

    auto_ef = os.path.join(os.path.dirname(os.path.abspath(auto_csv)), "ejection_fraction.csv")
    manual_ef = os.path.join(os.path.dirname(os.path.abspath(manual_csv)), "ejection_fraction.csv")
    if os.path.exists(auto_ef) and os.path.exists(manual_ef):
        ef_merged = _paired(read_csv(auto_ef, EF_COLUMNS[:4]), read_csv(manual_ef, EF_COLUMNS[:4]), "subject")
        s = _parameter_series(ef_merged, "EF_percent", "EF", "%")
        if s is not None:
            series.append(s)

    reports, boxes = [], {}
    for s in series:
        try:
            reports.append(agreement_report(s, halved_denominator=halved_cv))
        except ContractViolation as e:
            logger.warning(f"{s.parameter}: {e}")
        boxes[s.parameter] = boxplot_summary(np.abs(s.differences))
    agreement = agreement_frame(reports)
    boxplot = boxplot_frame(boxes)
    write_csv(agreement, os.path.join(out_dir, "agreement.csv"))
    write_csv(boxplot, os.path.join(out_dir, "boxplot.csv"))

    table = None
    if anova_sums is not None:
        ss_b, df_b, ss_w, df_w = anova_sums
        table = anova_from_sums(ss_b, int(df_b), ss_w, int(df_w))
    elif groups is not None and len(groups) >= 2:
        values = [read_csv(path, [group_metric])[group_metric].dropna().to_numpy() for path in groups]
        table = anova_oneway(values)
    if table is not None:
        write_anova(table, os.path.join(out_dir, "anova.txt"))
        logger.info(f"ANOVA: F={table.f:.3f}, p={table.p:.4f}")
    return {"agreement": agreement, "boxplot": boxplot, "anova": table}

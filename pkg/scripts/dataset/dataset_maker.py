import logging
import os
from dataclasses import replace
from typing import Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import zoom
from tqdm import tqdm

from scripts.evaluation.reports import read_csv, write_csv
from scripts.preprocessing.niblack import compose_input
from scripts.preprocessing.pgm_io import pgm_read, pgm_write
from scripts.preprocessing.phantom import generate_phantom
from scripts.preprocessing.sample import ImageSample
from scripts.utils.config import SYNTHETIC_PREFIX
from scripts.utils.errors import ContractViolation

logger = logging.getLogger(__name__)

MANIFEST_NAME = "samples.csv"
MANIFEST_COLUMNS = ["sample_id", "subject_id", "phase", "calibration_mm", "image", "mask"]


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """双線形補間で size x size にリサイズする（uint8 のまま返す）。"""
    h, w = image.shape
    if (h, w) == (size, size):
        return image
    out = zoom(image.astype(np.float64), (size / h, size / w), order=1)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_mask(mask: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """最近傍補間でマスクを shape にリサイズする（二値を保つ）。"""
    h, w = mask.shape
    if (h, w) == tuple(shape):
        return mask.astype(np.uint8)
    return zoom(mask.astype(np.uint8), (shape[0] / h, shape[1] / w), order=0)


def resize_sample(sample: ImageSample, size: int) -> ImageSample:
    """
    N x N にリサイズしたサンプルを返す（画像は双線形、マスクは最近傍）。
    calibration は縦横の拡大率の平均で換算する。
    """
    h, w = sample.image.shape
    if (h, w) == (size, size):
        return sample
    image = resize_image(sample.image, size)
    mask = resize_mask(sample.mask, (size, size))
    scale = (h / size + w / size) / 2.0
    return replace(sample, image=image, mask=mask, calibration=sample.calibration * scale)


class DatasetMaker:
    """
    合成ファントムから PGM データセットを作成するクラス。

    出力ディレクトリには images/、masks/ と、サンプル一覧 samples.csv
    (sample_id, subject_id, phase, calibration_mm, image, mask) が作られる。
    """

    def __init__(self, is_debug: bool = False):
        self.is_debug = is_debug

    def synthesize(self, out_dir: str, n_subjects: int, size: int = 64, seed: int = 0) -> pd.DataFrame:
        """
        被験者ごとに ED / ES のファントムを生成して保存する。

        Args:
            out_dir (str): 出力先ディレクトリ
            n_subjects (int): 被験者数（サンプル数はその 2 倍）
            size (int): 画像サイズ N
            seed (int): 乱数シード

        Returns:
            pd.DataFrame: 書き出したサンプル一覧

        Raises:
            ContractViolation: n_subjects が 1 未満の場合
        """
        if n_subjects < 1:
            raise ContractViolation(f"n_subjects must be >= 1, got {n_subjects}")
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)

        rows = []
        for sample in tqdm(synthetic_samples(n_subjects, size, seed), desc="synth", disable=not self.is_debug):
            rows.append(self.write_sample(out_dir, sample))
        manifest = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
        write_csv(manifest, os.path.join(out_dir, MANIFEST_NAME))
        logger.info(f"{len(rows)} samples written to {out_dir}")
        return manifest

    @staticmethod
    def write_sample(out_dir: str, sample: ImageSample) -> dict:
        """1 サンプルを PGM で保存し、マニフェストの 1 行を返す。マスクは {0, 255} で保存する。"""
        image_rel = os.path.join("images", f"{sample.sample_id}.pgm")
        mask_rel = os.path.join("masks", f"{sample.sample_id}.pgm")
        pgm_write(os.path.join(out_dir, image_rel), sample.image)
        pgm_write(os.path.join(out_dir, mask_rel), sample.mask.astype(np.uint8) * 255)
        return {
            "sample_id": sample.sample_id,
            "subject_id": sample.subject_id,
            "phase": sample.phase,
            "calibration_mm": sample.calibration,
            "image": image_rel,
            "mask": mask_rel,
        }


def synthetic_samples(n_subjects: int, size: int, seed: int) -> List[ImageSample]:
    """被験者 i のファントムはシード seed + i から生成される。"""
    samples = []
    for i in range(n_subjects):
        ed, es = generate_phantom(size, seed + i, subject_id=f"subject{i:03d}")
        samples.extend([ed, es])
    return samples


class SampleStore:
    """
    データセットの読み込みとネットワーク入力の作成を行うクラス。

    source にはデータセットディレクトリか "synthetic:<被験者数>" を指定する。
    """

    def __init__(self, source: str, input_size: int, niblack_k: float = 2.0, seed: int = 0):
        self.source = source
        self.input_size = input_size
        self.niblack_k = niblack_k
        self.seed = seed
        self.samples = self.load(source, input_size, seed)

    @staticmethod
    def load(source: str, size: int, seed: int = 0) -> List[ImageSample]:
        """
        サンプルを読み込む。

        Raises:
            ContractViolation: 合成指定が不正な場合
            FormatError: samples.csv や PGM が壊れている場合
            OSError: ファイルが読めない場合（ファイル名を含む）
        """
        if source.startswith(SYNTHETIC_PREFIX):
            count = source[len(SYNTHETIC_PREFIX):]
            if not count.isdigit() or int(count) < 1:
                raise ContractViolation(f"bad synthetic source '{source}'")
            return synthetic_samples(int(count), max(size, 32), seed)
        return SampleStore.load_directory(source)

    @staticmethod
    def load_directory(data_dir: str, mask_dir: Optional[str] = None) -> List[ImageSample]:
        """
        samples.csv に従って PGM を読み込む。

        Args:
            data_dir (str): samples.csv のあるディレクトリ
            mask_dir (str, optional): マスクを別ディレクトリ（予測マスク等）から読む場合に指定
        """
        manifest = read_csv(os.path.join(data_dir, MANIFEST_NAME), MANIFEST_COLUMNS)
        samples = []
        for row in manifest.itertuples(index=False):
            image = pgm_read(os.path.join(data_dir, row.image))
            if mask_dir is None:
                mask_path = os.path.join(data_dir, row.mask)
            else:
                mask_path = os.path.join(mask_dir, os.path.basename(row.mask))
            mask = (pgm_read(mask_path) > 127).astype(np.uint8)
            samples.append(ImageSample(
                image=image,
                mask=mask,
                calibration=float(row.calibration_mm),
                phase=str(row.phase),
                subject_id=str(row.subject_id),
                sample_id=str(row.sample_id),
            ))
        return samples

    def filter_phase(self, phases: Iterable[str]) -> List[ImageSample]:
        wanted = set(phases)
        return [s for s in self.samples if s.phase in wanted]

    def by_ids(self, sample_ids: Iterable[str]) -> List[ImageSample]:
        index = {s.sample_id: s for s in self.samples}
        return [index[i] for i in sample_ids]

    def resized(self, sample: ImageSample) -> ImageSample:
        return resize_sample(sample, self.input_size)

    def network_input(self, sample: ImageSample, dtype=np.float32) -> np.ndarray:
        """2 x N x N の入力（原画像 / 255 と Niblack 二値化 / 255）を作成する。"""
        return compose_input(resize_image(sample.image, self.input_size), self.niblack_k, dtype)

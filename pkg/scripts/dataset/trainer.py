import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from scripts.autograd.tensor import Profile, Tensor, backward, inference_mode
from scripts.dataset.dataset_maker import resize_sample
from scripts.evaluation.metrics import dice
from scripts.evaluation.reports import write_csv
from scripts.layers.functional import softmax_cross_entropy
from scripts.layers.optimizer import OptimizerState, sgd_step
from scripts.networks.architectures import Model, build_model
from scripts.preprocessing.augmentation import augment_sample
from scripts.preprocessing.folds import make_folds
from scripts.preprocessing.niblack import compose_input
from scripts.preprocessing.sample import ImageSample
from scripts.utils.checkpoint import checkpoint_write
from scripts.utils.config import RunConfig
from scripts.utils.errors import ContractViolation, TrainingDivergedError

logger = logging.getLogger(__name__)

EPOCH_LOG_COLUMNS = ["epoch", "lr", "loss", "train_dice", "val_dice"]


@dataclass
class FitResult:
    """
    Attributes:
        model (Model): Model holding the best parameters.
        history (pd.DataFrame): Epoch log (epoch, lr, loss, train_dice, val_dice).
        best_epoch (int): Epoch whose parameters were kept (-1 for the initialization).
        best_score (float): Selection score of the kept parameters.
    """

    model: Model
    history: pd.DataFrame
    best_epoch: int
    best_score: float


@dataclass
class FoldLog:
    fold: int
    train_subjects: List[str]
    val_subjects: List[str]
    train_samples: List[str]
    val_samples: List[str]
    best_epoch: int
    best_val_dice: float
    checkpoint: Optional[str] = None


def predict_masks(model: Model, inputs: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Argmax masks (n x N x N, uint8) for a stack of 2-channel inputs."""
    masks = []
    with inference_mode():
        for start in range(0, len(inputs), batch_size):
            batch = Tensor(inputs[start:start + batch_size].astype(model.profile.dtype, copy=False))
            masks.append(model(batch).data.argmax(axis=1).astype(np.uint8))
    if not masks:
        return np.zeros((0, model.input_size, model.input_size), dtype=np.uint8)
    return np.concatenate(masks)


def mean_dice(model: Model, inputs: np.ndarray, masks: np.ndarray, batch_size: int = 8) -> float:
    if len(inputs) == 0:
        return float("nan")
    predicted = predict_masks(model, inputs, batch_size)
    return float(np.mean([dice(p, m) for p, m in zip(predicted, masks)]))


class Trainer:
    """
    SGD training of one architecture on ImageSamples.

    Samples are resized to N, augmented by elastic deformation (training split only),
    composed into (image, Niblack) inputs and fed in seed-shuffled mini-batches. The
    parameters with the best validation Dice (training Dice without a validation
    split) are kept and checkpointed.
    """

    def __init__(self, config: RunConfig, profile: Profile = Profile.TRAINING, show_progress: bool = True):
        self.config = config
        self.profile = profile
        self.show_progress = show_progress

    def build_model(self) -> Model:
        c = self.config
        return build_model(c.arch, c.input_size, c.base_width, c.effective_dilation, self.profile, c.seed)

    def prepare(self, samples: Sequence[ImageSample], augment: bool = False,
                seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """
        Stack network inputs and target masks.

        Args:
            samples: Samples of any size; resized to N x N.
            augment (bool): Expand each sample by the configured augmentation factor.
            seed (int): Seed of the elastic deformations.

        Returns:
            Tuple[np.ndarray, np.ndarray]: (n x 2 x N x N inputs, n x N x N masks).
        """
        c = self.config
        inputs, masks = [], []
        rng = np.random.default_rng(seed)
        for sample in samples:
            resized = resize_sample(sample, c.input_size)
            expanded = [resized]
            if augment and c.augmentation_factor > 1:
                expanded = augment_sample(resized, c.augmentation_factor, c.elastic_alpha, c.elastic_sigma,
                                          int(rng.integers(0, 2 ** 31 - 1)))
            for item in expanded:
                # the Niblack channel is recomputed on the warped image
                inputs.append(compose_input(item.image, c.niblack_k, self.profile.dtype))
                masks.append(item.mask)
        n = c.input_size
        if not inputs:
            return np.zeros((0, 2, n, n), dtype=self.profile.dtype), np.zeros((0, n, n), dtype=np.uint8)
        return np.stack(inputs), np.stack(masks).astype(np.uint8)

    def fit(self, train: Sequence[ImageSample], val: Sequence[ImageSample] = (),
            checkpoint_path: Optional[str] = None, log_path: Optional[str] = None,
            model: Optional[Model] = None) -> FitResult:
        """
        Train on `train`, select on `val`.

        Args:
            train: Training samples (augmented).
            val: Validation samples (not augmented); may be empty.
            checkpoint_path (str, optional): Where to write the kept parameters.
            log_path (str, optional): Where to write the epoch log CSV.
            model (Model, optional): Start from this model instead of a fresh build.

        Returns:
            FitResult: Best model and epoch history.

        Raises:
            ContractViolation: If `train` is empty.
            TrainingDivergedError: If a batch loss is not finite.
        """
        if len(train) == 0:
            raise ContractViolation("training set is empty")
        c = self.config
        model = model or self.build_model()
        params = model.parameters()
        state = OptimizerState(c.learning_rate, c.momentum, c.weight_decay, c.lr_decay)
        # 同じシードなら同じ順番でミニバッチを作る
        rng = np.random.default_rng(c.seed)

        train_x, train_y = self.prepare(train, augment=True, seed=c.seed)
        plain_x, plain_y = self.prepare(train, augment=False)
        val_x, val_y = self.prepare(val, augment=False)
        logger.info(f"fit: {len(train)} samples -> {len(train_x)} training inputs, {len(val_x)} validation")

        best_score = -np.inf
        best_epoch = -1
        best_params = {name: p.data.copy() for name, p in params.items()}
        rows = []
        epochs = tqdm(range(c.max_epochs), desc=f"{c.arch} training", disable=not self.show_progress)
        for epoch in epochs:
            state.epoch = epoch
            lr = state.current_lr()
            order = rng.permutation(len(train_x))
            total, seen = 0.0, 0
            for batch_index, start in enumerate(range(0, len(order), c.batch_size)):
                idx = order[start:start + c.batch_size]
                loss = softmax_cross_entropy(model(Tensor(train_x[idx])), train_y[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergedError(lr, epoch, batch_index, value)
                backward(loss)
                sgd_step(params, state)
                total += value * len(idx)
                seen += len(idx)

            train_dice = mean_dice(model, plain_x, plain_y, c.batch_size)
            val_dice = mean_dice(model, val_x, val_y, c.batch_size)
            rows.append({"epoch": epoch + 1, "lr": lr, "loss": total / seen,
                         "train_dice": train_dice, "val_dice": val_dice})
            epochs.set_postfix(loss=f"{total / seen:.4f}", val_dice=f"{val_dice:.3f}")
            logger.debug(f"epoch {epoch + 1}: lr={lr:.6g} loss={total / seen:.5f} "
                         f"train_dice={train_dice:.4f} val_dice={val_dice:.4f}")

            score = val_dice if len(val_x) else train_dice
            if score > best_score:
                best_score, best_epoch = score, epoch + 1
                best_params = {name: p.data.copy() for name, p in params.items()}

        # 最良エポックのパラメータに戻す
        for name, p in params.items():
            p.data[...] = best_params[name]
        history = pd.DataFrame(rows, columns=EPOCH_LOG_COLUMNS)
        if log_path is not None:
            write_csv(history, log_path)
        if checkpoint_path is not None:
            checkpoint_write(model, checkpoint_path)
            logger.info(f"checkpoint (epoch {best_epoch}) written to {checkpoint_path}")
        return FitResult(model, history, best_epoch, float(best_score))

    def cross_validate(self, samples: Sequence[ImageSample], output_dir: Optional[str] = None) -> List[FoldLog]:
        """
        k-fold cross-validation with subject-level folds.

        Writes fold<k>.ckpt, fold<k>_log.csv and folds.json into `output_dir` when
        given. The fold logs are audited for subject leakage before returning.
        """
        c = self.config
        assignment = make_folds(samples, c.folds, c.seed)
        by_id = {s.sample_id: s for s in samples}
        logs = []
        for k in range(c.folds):
            train = [by_id[i] for i in assignment.training(k)]
            val = [by_id[i] for i in assignment.held_out(k)]
            checkpoint = log_path = None
            if output_dir is not None:
                checkpoint = os.path.join(output_dir, f"fold{k}.ckpt")
                log_path = os.path.join(output_dir, f"fold{k}_log.csv")
            logger.info(f"fold {k + 1}/{c.folds}: {len(train)} train / {len(val)} held out")
            result = self.fit(train, val, checkpoint, log_path)
            logs.append(FoldLog(
                fold=k,
                train_subjects=sorted({s.subject_id for s in train}),
                val_subjects=sorted({s.subject_id for s in val}),
                train_samples=[s.sample_id for s in train],
                val_samples=[s.sample_id for s in val],
                best_epoch=result.best_epoch,
                best_val_dice=result.best_score,
                checkpoint=checkpoint,
            ))
        audit_folds(logs, [s.sample_id for s in samples])
        if output_dir is not None:
            write_fold_logs(logs, os.path.join(output_dir, "folds.json"))
        return logs


def audit_folds(logs: Sequence[FoldLog], sample_ids: Optional[Sequence[str]] = None) -> None:
    """
    Raises:
        ContractViolation: If a fold evaluates a subject it was trained on, a sample is
            held out more than once, or (with `sample_ids`) a sample is never held out
            or an unknown id is.
    """
    held_out: Dict[str, int] = {}
    for log in logs:
        leaked = set(log.train_subjects) & set(log.val_subjects)
        if leaked:
            raise ContractViolation(f"fold {log.fold}: subjects in both splits: {sorted(leaked)}")
        for sample_id in log.val_samples:
            held_out[sample_id] = held_out.get(sample_id, 0) + 1
    repeated = sorted(s for s, n in held_out.items() if n != 1)
    if repeated:
        raise ContractViolation(f"samples held out more than once: {repeated}")
    if sample_ids is None:
        return
    missing = sorted(set(sample_ids) - set(held_out))
    if missing:
        raise ContractViolation(f"samples never held out: {missing}")
    unknown = sorted(set(held_out) - set(sample_ids))
    if unknown:
        raise ContractViolation(f"held-out samples not in the dataset: {unknown}")


def write_fold_logs(logs: Sequence[FoldLog], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([vars(log) for log in logs], f, ensure_ascii=False, indent=4)


def read_fold_logs(path: str) -> List[FoldLog]:
    with open(path, "r", encoding="utf-8") as f:
        return [FoldLog(**entry) for entry in json.load(f)]

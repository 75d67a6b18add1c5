import os
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from scripts.utils.errors import ContractViolation

SYNTHETIC_PREFIX = "synthetic:"


class RunConfig(BaseModel):
    """
    Hyperparameters and paths of one run.

    Defaults are the reference optimizer settings at a small scale (N=64, B=8, batch 8).
    `desk_profile()` returns settings that converge on the phantom set, `clinical_profile()`
    the clinical-scale values. Config files are flat JSON with these keys; unknown keys
    are rejected.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    arch: Literal["unet", "dilated-unet", "mfp-unet"] = "mfp-unet"
    input_size: int = Field(64, gt=0)
    base_width: int = Field(8, ge=2)
    dilation: int = Field(2, ge=1)
    learning_rate: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0005, ge=0)
    lr_decay: float = Field(1e-4, ge=0)
    batch_size: int = Field(8, gt=0)
    max_epochs: int = Field(30, ge=0)
    augmentation_factor: int = Field(10, ge=1)
    folds: int = Field(5, ge=2)
    seed: int = Field(0, ge=0)
    data_dir: str = "synthetic:8"
    output_dir: str = "output"
    elastic_alpha: float = Field(2.0, ge=0)
    elastic_sigma: float = Field(6.0, gt=0)
    niblack_k: float = 2.0

    @field_validator("input_size")
    @classmethod
    def _multiple_of_16(cls, value: int) -> int:
        if value % 16:
            raise ValueError(f"input_size must be a multiple of 16, got {value}")
        return value

    @field_validator("data_dir")
    @classmethod
    def _synthetic_count(cls, value: str) -> str:
        if value.startswith(SYNTHETIC_PREFIX):
            count = value[len(SYNTHETIC_PREFIX):]
            if not count.isdigit() or int(count) < 1:
                raise ValueError(f"synthetic data needs a positive subject count, got '{value}'")
        return value

    @property
    def effective_dilation(self) -> int:
        return 1 if self.arch == "unet" else self.dilation

    @classmethod
    def desk_profile(cls, **overrides) -> "RunConfig":
        """
        Settings that fit the phantom set on a CPU in minutes.

        The defaults take one SGD step per epoch on a handful of subjects, which only
        learns the class prior. This profile uses batch 2, lr 0.01, a 3x augmentation
        with a warp strong enough to move mask pixels, and 80 epochs.
        """
        values = dict(input_size=64, base_width=4, batch_size=2, learning_rate=0.01, max_epochs=80,
                      augmentation_factor=3, elastic_alpha=12.0, elastic_sigma=4.0)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def clinical_profile(cls, **overrides) -> "RunConfig":
        """Clinical-scale settings: N=256, B=64, batch 64, 100 epochs."""
        values = dict(input_size=256, base_width=64, batch_size=64, max_epochs=100)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        """
        Load a JSON config file.

        Raises:
            ContractViolation: If a key is unknown or a value is invalid.
            OSError: If the file cannot be read.
        """
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ContractViolation(f"{path}: {e}") from e

    def with_overrides(self, **overrides) -> "RunConfig":
        """Copy with non-None overrides applied and validated."""
        values = self.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return RunConfig(**values)
        except ValidationError as e:
            raise ContractViolation(str(e)) from e

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.model_dump_json(indent=2))

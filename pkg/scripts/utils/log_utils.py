import logging
import os
import platform
import time
from typing import Optional

import numpy as np

from scripts.autograd.tensor import Profile

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def get_time_str() -> str:
    time_str = time.strftime("%Y%m%d_%H%M%S", time.localtime())
    return time_str


def setup_logging(is_debug: bool = False, log_dir: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger once per run.

    Args:
        is_debug (bool): Emit DEBUG records when True, INFO otherwise.
        log_dir (str, optional): Also write a per-run log file "run_<time>.log" here.

    Returns:
        logging.Logger: The root logger.
    """
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if is_debug else logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)

    console = logging.StreamHandler()
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(console)
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(log_dir, f"run_{get_time_str()}.log"), encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)
    return root


def log_runtime_info(profile: Profile, logger: Optional[logging.Logger] = None) -> None:
    logger = logger or logging.getLogger(__name__)
    logger.info(f"Numeric profile: {profile.name} ({profile.value})")
    logger.info(f"numpy {np.__version__}, Python {platform.python_version()}")
    logger.info(f"CPU count: {os.cpu_count()}")

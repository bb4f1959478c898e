"""Environment-driven settings and logging setup."""
import logging
import os
from dataclasses import dataclass
from functools import lru_cache

from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

TOL_SPEED = 1e-9
TOL_ORTH = 1e-9
REFERENCE_RTOL = 1e-12
REFERENCE_ATOL = 1e-12
QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-14
FD_FLOOR = 1e-6

OUTPUT_DIR = "output"


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    output_dir: str = OUTPUT_DIR
    n_jobs: int = 1


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    load_dotenv()
    try:
        n_jobs = int(os.getenv("INERTIAL_SPIN_N_JOBS", "1"))
    except ValueError:
        n_jobs = 1
    return Settings(
        log_level=os.getenv("INERTIAL_SPIN_LOG_LEVEL", "INFO").upper(),
        output_dir=os.getenv("INERTIAL_SPIN_OUTPUT_DIR", OUTPUT_DIR),
        n_jobs=n_jobs,
    )


def setup_logging(level: str = None) -> None:
    level = level or get_settings().log_level
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)

"""Utility functions shared by the CLI and the library modules."""

import logging
import math
from typing import Iterable

import numpy as np

import settings


def setup_logging(level=None, verbose=False):
    """
    Configure logging for the application.

    Args:
        level: Logging level (e.g., "INFO", "DEBUG"). If None, uses settings.LOG_LEVEL.
        verbose: If True, sets level to "INFO" regardless of level argument.
    """
    if verbose:
        log_level = "INFO"
    elif level:
        log_level = level.upper()
    else:
        log_level = settings.LOG_LEVEL

    try:
        log_level_value = getattr(logging, log_level)
    except AttributeError:
        try:
            log_level_value = getattr(logging, settings.LOG_LEVEL)
        except AttributeError:
            log_level_value = logging.WARNING

    logging.basicConfig(
        level=log_level_value,
        format=settings.LOG_FORMAT,
        datefmt=settings.LOG_DATE_FORMAT,
    )

    return logging.getLogger(__name__)


def exact_sum(values: Iterable[float]) -> float:
    """Correctly rounded sum; independent of the order of ``values``."""
    return math.fsum(values)


def column_means(values: np.ndarray) -> np.ndarray:
    """
    Column means of a 1-D or 2-D array with correctly rounded column sums.

    Rows may be permuted without changing a single bit of the result.
    """
    values = np.asarray(values, dtype=float)
    count = values.shape[0]
    if values.ndim == 1:
        return np.float64(math.fsum(values.tolist()) / count)
    columns = values.reshape(count, -1).T.tolist()
    sums = np.array([math.fsum(column) for column in columns])
    return (sums / count).reshape(values.shape[1:])


def derive_rng(master_seed: int, *key: int) -> np.random.Generator:
    """
    Independent random stream for ``(master_seed, *key)``.

    Streams depend only on the key, never on how many other streams were
    drawn before, so replications can run in any order or in parallel.
    """
    sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(key))
    return np.random.default_rng(sequence)

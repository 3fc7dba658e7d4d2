# utils.py
import time
import logging
import hashlib
from typing import Iterable, Sequence

import numpy as np
from tqdm import tqdm

from config import LOG_LEVEL, SHOW_PROGRESS

# --- Logging Setup ---
logging.basicConfig(
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    level=getattr(logging, LOG_LEVEL, logging.INFO)
)
logger = logging.getLogger(__name__)


# --- Seed Streams ---

# Stream indices are part of the documented seed schedule; never renumber.
STREAMS = {
    'data': 0,
    'split': 1,
    'init': 2,
    'shuffle': 3,
    'augment': 4,
    'sampling': 5,
    'proxy': 6,
}


def derive_rng(master_seed: int, stream: str, *extra: int) -> np.random.Generator:
    """
    Returns an independent generator for one named stream of a master seed.

    The rule is SeedSequence(entropy=master_seed, spawn_key=(STREAMS[stream], *extra)),
    so e.g. the proxy stream of repetition 2, iteration 5 is spawn_key (6, 2, 5).
    """
    if stream not in STREAMS:
        raise KeyError(f"Unknown seed stream '{stream}'")
    key = (STREAMS[stream],) + tuple(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=key))


def derive_seed(master_seed: int, stream: str, *extra: int) -> int:
    """Integer seed drawn from a stream, for components that take a plain seed."""
    return int(derive_rng(master_seed, stream, *extra).integers(0, 2**31 - 1))


# --- Hashing ---

def params_digest(arrays: Sequence[np.ndarray]) -> str:
    """SHA-256 over the raw bytes of a list of arrays, in order."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        digest.update(str(arr.shape).encode('utf-8'))
        digest.update(arr.tobytes())
    return digest.hexdigest()


# --- Timing & Progress ---

class Stopwatch:
    """Accumulates monotonic wall time per named phase."""

    def __init__(self):
        self.totals = {}
        self._phase = None
        self._start = 0.0

    def __call__(self, phase: str):
        self._phase = phase
        return self

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self._start
        self.totals[self._phase] = self.totals.get(self._phase, 0.0) + elapsed
        return False

    def take(self, phase: str) -> float:
        """Returns and resets the accumulated time of a phase."""
        return self.totals.pop(phase, 0.0)


def progress(iterable: Iterable, desc: str, total: int = None, enabled: bool = None):
    """Wraps an iterable in a tqdm bar when progress output is enabled."""
    show = SHOW_PROGRESS if enabled is None else enabled
    return tqdm(iterable, desc=desc, total=total, disable=not show, leave=False)

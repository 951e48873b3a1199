"""Accounting of image buffer allocations.

The tiled IO and warping paths register every pixel buffer they hold so that
tests can assert the memory bound of the streaming pipeline (the bound covers
image buffers; small per-tile coordinate scratch is excluded by design).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class BufferTracker:
    """Thread-safe running total and high-water mark of tracked bytes."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._current = 0
        self._peak = 0

    def add(self, nbytes: int) -> None:
        with self._lock:
            self._current += int(nbytes)
            if self._current > self._peak:
                self._peak = self._current

    def release(self, nbytes: int) -> None:
        with self._lock:
            self._current -= int(nbytes)

    @contextmanager
    def track(self, nbytes: int):
        self.add(nbytes)
        try:
            yield
        finally:
            self.release(nbytes)

    @contextmanager
    def track_array(self, arr: np.ndarray):
        with self.track(arr.nbytes):
            yield arr

    @property
    def current(self) -> int:
        with self._lock:
            return self._current

    @property
    def peak(self) -> int:
        with self._lock:
            return self._peak

    def reset(self) -> None:
        with self._lock:
            self._current = 0
            self._peak = 0


#: Process-wide tracker used by the IO and warping modules.
TRACKER = BufferTracker()

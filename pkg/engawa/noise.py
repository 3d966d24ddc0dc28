"""Reproducible Gaussian increments.

Every block of ``BLOCK_SIZE`` time steps of one particle on one path has its
own counter-based Philox stream keyed by
``SeedSequence(seed, spawn_key=(path, particle, block))``. Row
``k % BLOCK_SIZE`` of a block holds the standard normal vector of that
particle at step ``k``. A draw therefore depends on (seed, path, particle,
step) only, never on how many paths or particles run side by side.
"""
import logging
from typing import Sequence

import numpy as np

logger = logging.getLogger('engawa.noise')

BLOCK_SIZE = 1024

# spawn key slot reserved for initial layouts; particle indices never get this large
LAYOUT_STREAM = 2 ** 32 - 1


def stream(seed: int, path: int, particle: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path, particle, block))))


def layout_rng(seed: int, path: int) -> np.random.Generator:
    return stream(seed, path, LAYOUT_STREAM, 0)


class IncrementStream:
    """Standard normals of shape ``(particles, d)`` per path and step."""

    def __init__(self, seed: int, paths: Sequence[int], shape: tuple[int, int]):
        self.seed = int(seed)
        self.paths = list(paths)
        self.shape = tuple(shape)
        self._block_index = -1
        self._block = None

    def _load(self, block: int) -> None:
        logger.debug('Drawing noise block %d for %d paths', block, len(self.paths))
        n, d = self.shape
        self._block = np.stack([
            np.stack([stream(self.seed, p, i, block).standard_normal((BLOCK_SIZE, d)) for i in range(n)], axis=1)
            for p in self.paths
        ])
        self._block_index = block

    def normals(self, step: int) -> np.ndarray:
        """Standard normals of all paths for one step, shape ``(paths,) + shape``."""
        block, row = divmod(step, BLOCK_SIZE)
        if block != self._block_index:
            self._load(block)
        return self._block[:, row]

    def normals_range(self, start: int, stop: int) -> np.ndarray:
        """Standard normals for steps ``start <= k < stop``, shape ``(paths, stop - start) + shape``."""
        rows = []
        k = start
        while k < stop:
            block, row = divmod(k, BLOCK_SIZE)
            if block != self._block_index:
                self._load(block)
            take = min(BLOCK_SIZE - row, stop - k)
            rows.append(self._block[:, row:row + take])
            k += take
        if not rows:
            return np.zeros((len(self.paths), 0) + self.shape)
        return np.concatenate(rows, axis=1)

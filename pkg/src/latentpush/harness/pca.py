"""PCA projection for action-spread reports.

Centered SVD with a deterministic sign convention: each component is flipped
so its largest-magnitude coordinate is positive, which makes projections
reproducible across runs regardless of SVD sign freedom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PCAResult:
    coords: np.ndarray            # (N, components)
    explained: np.ndarray         # variance ratio per component
    degenerate: bool              # all samples identical


def pca_project(samples: np.ndarray, components: int = 2) -> PCAResult:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        samples = samples.reshape(samples.shape[0], -1)
    n = samples.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    centered = samples - samples.mean(axis=0)
    if not centered.any():
        return PCAResult(np.zeros((n, components)), np.zeros(components), True)
    u, s, _ = np.linalg.svd(centered, full_matrices=False)
    c = min(components, s.size)
    coords = u[:, :c] * s[:c]
    for j in range(c):
        i = np.argmax(np.abs(coords[:, j]))
        if coords[i, j] < 0:
            coords[:, j] = -coords[:, j]
    if c < components:
        coords = np.pad(coords, ((0, 0), (0, components - c)))
    var = s ** 2
    explained = np.zeros(components)
    explained[:c] = var[:c] / var.sum()
    return PCAResult(coords, explained, False)

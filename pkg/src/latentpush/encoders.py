"""Frozen dual-stream patch encoders.

Observations split into two token streams with deliberately different
statistics. The geometric stream projects the occupancy and gripper channels
and standardizes each latent dim against frozen calibration constants; the
semantic stream projects the one-hot class channels and L2-normalizes each
token. Both projections are fixed random maps drawn from the seed, never
trained, so identical observations always encode to identical latents and no
encoder parameter ever reaches an optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GEOM_CHANNELS = 2  # object silhouettes + gripper


@dataclass(frozen=True)
class LatentState:
    """Paired token grids; leading axes are free (frames, batch, ...)."""

    geom: np.ndarray  # (..., T, d_geom)
    sem: np.ndarray   # (..., T, d_sem)

    @property
    def tokens(self) -> int:
        return self.geom.shape[-2]

    def reshape_lead(self, *lead: int) -> "LatentState":
        t, dg = self.geom.shape[-2:]
        ds = self.sem.shape[-1]
        return LatentState(self.geom.reshape(*lead, t, dg),
                           self.sem.reshape(*lead, t, ds))


@dataclass(frozen=True)
class EncoderParams:
    seed: int
    grid: int
    patch: int
    num_classes: int
    d_geom: int
    d_sem: int
    w_geom: np.ndarray      # (patch*patch*GEOM_CHANNELS, d_geom)
    w_sem: np.ndarray       # (patch*patch*num_classes, d_sem)
    geom_mean: np.ndarray   # (d_geom,) calibration constants
    geom_std: np.ndarray    # (d_geom,)

    @property
    def tokens_per_frame(self) -> int:
        return (self.grid // self.patch) ** 2

    @property
    def use_semantic(self) -> bool:
        return True

    def encode(self, frames: np.ndarray) -> "LatentState":
        return encode(frames, self)


def create_encoder(seed: int, grid: int = 32, patch: int = 4,
                   num_classes: int = 4, d_geom: int = 64,
                   d_sem: int = 64) -> EncoderParams:
    if grid % patch:
        raise ValueError(f"grid {grid} not divisible by patch {patch}")
    rng = np.random.default_rng(seed)
    in_geom = patch * patch * GEOM_CHANNELS
    in_sem = patch * patch * num_classes
    w_geom = (rng.normal(0.0, 1.0, size=(in_geom, d_geom)) / np.sqrt(in_geom)).astype(np.float32)
    w_sem = (rng.normal(0.0, 1.0, size=(in_sem, d_sem)) / np.sqrt(in_sem)).astype(np.float32)

    # calibration corpus: sparse random patches shaped like rendered content
    # (mostly empty cells, occasional blobs); only its frozen moments matter
    n_cal = 4096
    density = rng.uniform(0.0, 0.6, size=(n_cal, 1))
    cal = (rng.random((n_cal, in_geom)) < density).astype(np.float32)
    cal *= rng.choice(np.array([0.5, 1.0], dtype=np.float32), size=(n_cal, 1))
    proj = cal @ w_geom
    geom_mean = proj.mean(axis=0).astype(np.float32)
    geom_std = np.maximum(proj.std(axis=0), 1e-3).astype(np.float32)

    return EncoderParams(seed=seed, grid=grid, patch=patch, num_classes=num_classes,
                         d_geom=d_geom, d_sem=d_sem, w_geom=w_geom, w_sem=w_sem,
                         geom_mean=geom_mean, geom_std=geom_std)


def patchify(frames: np.ndarray, patch: int) -> np.ndarray:
    """(..., G, G, ch) -> (..., (G/p)^2, p*p*ch), row-major token order."""
    *lead, g, g2, ch = frames.shape
    if g != g2 or g % patch:
        raise ValueError(f"bad raster shape {frames.shape} for patch {patch}")
    s = g // patch
    x = frames.reshape(*lead, s, patch, s, patch, ch)
    x = np.moveaxis(x, -4, -3)  # (..., s, s, patch, patch, ch)
    return x.reshape(*lead, s * s, patch * patch * ch)


def encode(frames: np.ndarray, params: EncoderParams) -> LatentState:
    """Encode stacked rasters (..., G, G, 2+C) into the two token streams."""
    expect = GEOM_CHANNELS + params.num_classes
    if frames.shape[-1] != expect or frames.shape[-2] != params.grid:
        raise ValueError(f"observation shape {frames.shape} does not match encoder "
                         f"(grid {params.grid}, channels {expect})")
    frames = np.asarray(frames, dtype=np.float32)
    geom_patches = patchify(frames[..., :GEOM_CHANNELS], params.patch)
    sem_patches = patchify(frames[..., GEOM_CHANNELS:], params.patch)

    z_geom = (geom_patches @ params.w_geom - params.geom_mean) / params.geom_std

    z_sem = sem_patches @ params.w_sem
    norm = np.linalg.norm(z_sem, axis=-1, keepdims=True)
    z_sem = z_sem / np.maximum(norm, 1e-6)

    return LatentState(geom=z_geom.astype(np.float32), sem=z_sem.astype(np.float32))


@dataclass(frozen=True)
class PixelCodec:
    """Encoder bypass for the pixel-space ablation: tokens are the raw
    flattened raster patches, one stream, no projection, no normalization."""

    grid: int = 32
    patch: int = 4
    channels: int = 6

    @property
    def tokens_per_frame(self) -> int:
        return (self.grid // self.patch) ** 2

    @property
    def d_geom(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def d_sem(self) -> int:
        return 0

    @property
    def use_semantic(self) -> bool:
        return False

    def encode(self, frames: np.ndarray) -> LatentState:
        if frames.shape[-1] != self.channels or frames.shape[-2] != self.grid:
            raise ValueError(f"raster shape {frames.shape} does not match codec")
        tokens = patchify(np.asarray(frames, dtype=np.float32), self.patch)
        empty = np.zeros(tokens.shape[:-1] + (0,), dtype=np.float32)
        return LatentState(geom=tokens, sem=empty)


def latent_mse(a: LatentState, b: LatentState) -> dict[str, float]:
    """Mean squared difference per stream plus their mean."""
    if a.geom.shape != b.geom.shape or a.sem.shape != b.sem.shape:
        raise ValueError("latent shapes do not match")
    g = float(np.mean((a.geom - b.geom) ** 2))
    s = float(np.mean((a.sem - b.sem) ** 2))
    return {"geom": g, "sem": s, "combined": 0.5 * (g + s)}

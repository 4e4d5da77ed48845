"""Reconstruction losses over coordinate batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import HyperNetParams, MainNetWeights
from .errors import NumericError, ShapeError
from .nets import hyper_forward, main_forward


@dataclass(frozen=True)
class SampleBatch:
    """Coordinate grid paired with target values for one or more data samples.

    grid: (n, input_dim) in the normalized [-1, 1]^p domain.
    targets: (n, c) for a single sample, or (t, n, c) when several samples
    share the grid; sample_ids then gives their dataset indices.
    """

    grid: np.ndarray
    targets: np.ndarray
    sample_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        if grid.ndim != 2 or grid.shape[0] < 1:
            raise ShapeError(f"grid must be (n, p) with n >= 1, got {grid.shape}")
        if np.abs(grid).max() > 1.0 + 1e-12:
            raise ShapeError("grid coordinates must lie in [-1, 1]^p")
        if targets.ndim not in (2, 3) or targets.shape[-2] != grid.shape[0]:
            raise ShapeError(f"targets {targets.shape} do not match grid {grid.shape}")
        if not np.all(np.isfinite(targets)):
            raise ShapeError("targets contain non-finite values")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "targets", targets)
        if self.sample_ids is not None:
            object.__setattr__(self, "sample_ids", tuple(int(i) for i in self.sample_ids))

    @property
    def n_coords(self) -> int:
        return self.grid.shape[0]


def recon_loss(params: HyperNetParams, z: np.ndarray, batch: SampleBatch):
    """Half squared-residual loss of the generated network against one sample.

    Returns (loss, residuals (n, c)); residuals are prediction minus target
    and are reusable by the gradient routines.
    """
    targets = batch.targets
    if targets.ndim != 2:
        raise ShapeError("recon_loss expects a single-sample batch with (n, c) targets")
    w, _ = hyper_forward(params, z)
    pred, _ = main_forward(MainNetWeights(params.arch.main, w), batch.grid)
    if not np.all(np.isfinite(pred)):
        raise NumericError("non-finite network output in recon_loss")
    if pred.shape != targets.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {targets.shape}")
    residuals = pred - targets
    loss = 0.5 * float(np.sum(residuals * residuals))
    return loss, residuals


def total_loss(params: HyperNetParams, latents: np.ndarray, grid: np.ndarray,
               targets: np.ndarray) -> float:
    """Sum of per-sample reconstruction losses, in sample order.

    latents: (t, l); targets: (t, n, c) sharing one grid.
    """
    latents = np.asarray(latents, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if latents.ndim != 2 or targets.ndim != 3 or latents.shape[0] != targets.shape[0]:
        raise ShapeError(
            f"need one latent per sample: latents {latents.shape}, targets {targets.shape}"
        )
    total = 0.0
    for j in range(latents.shape[0]):
        loss, _ = recon_loss(params, latents[j], SampleBatch(grid, targets[j]))
        total += loss
    return total


def mse_from_loss(loss: float, n_coords: int, output_dim: int) -> float:
    """Per-value mean squared error of a half-sum-of-squares loss."""
    return 2.0 * loss / (n_coords * output_dim)

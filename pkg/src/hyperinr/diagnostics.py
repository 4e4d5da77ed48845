"""Latent-space conditioning diagnostics: loss gradients with respect to the
latent, the Gauss-Newton Hessian of the reconstruction loss, its spectrum,
and dataset-level cumulative conditioning tables. Finite-difference oracles
for both the gradient and the Hessian live here as independent cross-checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arch import HyperNetParams, MainNetWeights
from .errors import NumericError
from .eigen import eigen_symmetric
from .loss import SampleBatch, recon_loss
from .nets import (
    hyper_backward,
    hyper_forward,
    hyper_jacobian_z,
    main_backward,
    main_forward,
    main_jvp,
)

KAPPA_THRESHOLDS = tuple(10.0**k for k in range(1, 9))       # 10^1 .. 10^8
SIGMA_THRESHOLDS = tuple(10.0**-k for k in range(0, 7))      # 10^0 .. 10^-6


@dataclass(frozen=True)
class LatentGradient:
    sample_id: int
    g: np.ndarray
    norm: float


@dataclass(frozen=True)
class HessianReport:
    sample_id: int
    eigenvalues: np.ndarray  # ascending
    sigma_min: float
    sigma_max: float
    kappa: float             # inf when sigma_min is exactly zero
    psd_violation: float     # max(0, -lambda_min) before clamping
    grad_norm: float
    loss: float


@dataclass
class ConditioningTable:
    """Cumulative spectrum statistics over one dataset split."""

    split: str
    n_samples: int
    kappa_thresholds: tuple
    kappa_pct: list          # % of samples with kappa > threshold
    sigma_thresholds: tuple
    sigma_pct: list          # % of samples with sigma_min < threshold
    max_kappa: float
    min_sigma: float
    failures: list = field(default_factory=list)  # (sample_id, message)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "samples": self.n_samples,
            "condition_number": {
                f"> 1e{int(math.log10(t))}": pct
                for t, pct in zip(self.kappa_thresholds, self.kappa_pct)
            },
            "smallest_singular_value": {
                f"< 1e{int(math.log10(t))}": pct
                for t, pct in zip(self.sigma_thresholds, self.sigma_pct)
            },
            "max_condition_number": self.max_kappa,
            "min_singular_value": self.min_sigma,
            "failed_samples": [
                {"sample_id": sid, "error": msg} for sid, msg in self.failures
            ],
        }


def latent_gradient(params: HyperNetParams, z: np.ndarray, batch: SampleBatch,
                    sample_id: int = 0) -> LatentGradient:
    """Gradient of the half-squared reconstruction loss with respect to z.

    Chains the residual through the coordinate network's weight differential
    and the generator's latent differential; equals the backward pass of
    recon_loss. Vanishes exactly at exact reconstruction.
    """
    w, hcache = hyper_forward(params, z)
    y, mcache = main_forward(MainNetWeights(params.arch.main, w), batch.grid)
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite network output in latent_gradient")
    residuals = y - batch.targets
    dw = main_backward(mcache, residuals)
    _, g = hyper_backward(hcache, dw)
    return LatentGradient(sample_id, g, float(np.linalg.norm(g)))


def gauss_newton_hessian(params: HyperNetParams, z: np.ndarray,
                         batch: SampleBatch) -> np.ndarray:
    """Gauss-Newton Hessian of the reconstruction loss with respect to z.

    Sum over coordinates of J_i^T J_i where J_i chains the per-coordinate
    output differential with the generator's latent Jacobian. Symmetric
    positive semidefinite by construction (symmetrized against round-off);
    equals the exact Hessian at zero residual and is the Gauss-Newton
    approximation elsewhere.
    """
    J = hyper_jacobian_z(params, z)                     # (d, l)
    weights = MainNetWeights(params.arch.main, hyper_forward(params, z)[0])
    dy = main_jvp(weights, batch.grid, J.T)             # (l, n, c)
    l = params.arch.latent_dim
    M = dy.reshape(l, -1).T                             # (n*c, l)
    H = M.T @ M
    return 0.5 * (H + H.T)


def fd_latent_gradient(params: HyperNetParams, z: np.ndarray, batch: SampleBatch,
                       h: float = 1e-6) -> np.ndarray:
    """Central-difference oracle for latent_gradient."""
    z = np.asarray(z, dtype=np.float64)
    g = np.zeros_like(z)
    for i in range(z.size):
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        lp, _ = recon_loss(params, zp, batch)
        lm, _ = recon_loss(params, zm, batch)
        g[i] = (lp - lm) / (2.0 * h)
    return g


def fd_latent_hessian(params: HyperNetParams, z: np.ndarray, batch: SampleBatch,
                      h: float = 1e-5) -> np.ndarray:
    """Central differences of the analytic latent gradient; the independent
    oracle for gauss_newton_hessian (exact Hessian up to O(h^2))."""
    z = np.asarray(z, dtype=np.float64)
    H = np.zeros((z.size, z.size))
    for i in range(z.size):
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        gp = latent_gradient(params, zp, batch).g
        gm = latent_gradient(params, zm, batch).g
        H[:, i] = (gp - gm) / (2.0 * h)
    return 0.5 * (H + H.T)


def spectrum_report(H: np.ndarray, sample_id: int, grad_norm: float,
                    loss: float) -> HessianReport:
    """Spectrum statistics of a PSD Hessian. Negative round-off eigenvalues
    are clamped to zero for sigma_min; kappa is inf when sigma_min is zero."""
    vals, _ = eigen_symmetric(H)
    lam_min = float(vals[0])
    sigma_min = max(lam_min, 0.0)
    sigma_max = max(float(vals[-1]), 0.0)
    kappa = sigma_max / sigma_min if sigma_min > 0.0 else math.inf
    return HessianReport(
        sample_id=sample_id,
        eigenvalues=vals,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        kappa=kappa,
        psd_violation=max(0.0, -lam_min),
        grad_norm=grad_norm,
        loss=loss,
    )


def sample_report(params: HyperNetParams, z: np.ndarray, batch: SampleBatch,
                  sample_id: int = 0) -> HessianReport:
    loss, _ = recon_loss(params, z, batch)
    lg = latent_gradient(params, z, batch, sample_id)
    H = gauss_newton_hessian(params, z, batch)
    return spectrum_report(H, sample_id, lg.norm, loss)


def conditioning_tables(params: HyperNetParams, latents: np.ndarray, grid: np.ndarray,
                        targets: np.ndarray, split: str = "train",
                        sample_ids=None, coords: np.ndarray | None = None,
                        kappa_thresholds=KAPPA_THRESHOLDS,
                        sigma_thresholds=SIGMA_THRESHOLDS):
    """Per-sample spectrum reports aggregated into cumulative tables.

    Runs on the full coordinate set of every sample; pass coords (t, n, p)
    for per-sample query points instead of one shared grid. Per-sample
    numeric failures are recorded in the table instead of aborting the
    sweep. Returns (reports, ConditioningTable).
    """
    latents = np.asarray(latents, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    t = latents.shape[0]
    if sample_ids is None:
        sample_ids = range(t)
    sample_ids = [int(i) for i in sample_ids]
    reports = []
    failures = []
    for j in range(t):
        batch = SampleBatch(grid if coords is None else coords[j], targets[j])
        try:
            reports.append(sample_report(params, latents[j], batch, sample_ids[j]))
        except (NumericError, FloatingPointError) as exc:
            failures.append((sample_ids[j], str(exc)))
    kappas = np.array([r.kappa for r in reports])
    sigmas = np.array([r.sigma_min for r in reports])
    n = len(reports)
    kappa_pct = [100.0 * float(np.mean(kappas > t_)) if n else 0.0 for t_ in kappa_thresholds]
    sigma_pct = [100.0 * float(np.mean(sigmas < t_)) if n else 0.0 for t_ in sigma_thresholds]
    table = ConditioningTable(
        split=split,
        n_samples=n,
        kappa_thresholds=tuple(kappa_thresholds),
        kappa_pct=kappa_pct,
        sigma_thresholds=tuple(sigma_thresholds),
        sigma_pct=sigma_pct,
        max_kappa=float(np.max(kappas)) if n else 0.0,
        min_sigma=float(np.min(sigmas)) if n else 0.0,
        failures=failures,
    )
    return reports, table


def reports_to_csv(reports) -> str:
    lines = ["sample_id,sigma_min,sigma_max,kappa,grad_norm,loss"]
    for r in reports:
        lines.append(
            f"{r.sample_id},{r.sigma_min:.17g},{r.sigma_max:.17g},"
            f"{r.kappa:.17g},{r.grad_norm:.17g},{r.loss:.17g}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RankConditionReport:
    n_coords: int
    output_dim: int
    latent_dim: int

    @property
    def satisfied(self) -> bool:
        return self.n_coords * self.output_dim >= self.latent_dim

    def message(self) -> str:
        rel = ">=" if self.satisfied else "<"
        status = "satisfied" if self.satisfied else "VIOLATED"
        return (
            f"rank condition {status}: n*c = {self.n_coords}*{self.output_dim} "
            f"{rel} latent_dim = {self.latent_dim}"
        )


def rank_condition_check(n_coords: int, output_dim: int, latent_dim: int) -> RankConditionReport:
    """Necessary full-rank condition for the latent Hessian: n*c >= l.

    The Hessian is a sum of n rank-<=c terms, so fewer coordinate constraints
    than latent dimensions cannot span the latent space. A violation warrants
    a warning at configuration time, not an error.
    """
    return RankConditionReport(int(n_coords), int(output_dim), int(latent_dim))

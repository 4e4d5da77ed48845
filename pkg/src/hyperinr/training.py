"""Joint optimization of the weight generator and per-sample latents, and
frozen-generator latent inference for unseen samples.

The inner loop runs on preallocated torch buffers with explicit hand-written
backward passes; chunking inside a minibatch is fixed so gradient reductions
happen in a reproducible order. Compute precision is selectable (float64
default, float32 for throughput); returned parameters are always float64.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .arch import HyperNetArch, HyperNetParams, hyper_layer_slices
from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .nets import init_weights

CHUNK = 128  # fixed so the reduction order never depends on configuration

_DTYPES = {"f64": torch.float64, "f32": torch.float32}


@dataclass(frozen=True)
class TrainingData:
    """Per-sample targets over either one shared grid or per-sample coordinates.

    shared_grid: (n, p) used by every sample, or None when coords is given.
    coords: (t, n, p) per-sample query points (3-D pipelines), or None.
    targets: (t, n, c).
    """

    targets: np.ndarray
    shared_grid: np.ndarray | None = None
    coords: np.ndarray | None = None
    sample_ids: tuple[int, ...] | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.ndim != 3:
            raise ShapeError(f"targets must be (t, n, c), got {targets.shape}")
        object.__setattr__(self, "targets", targets)
        if (self.shared_grid is None) == (self.coords is None):
            raise ShapeError("provide exactly one of shared_grid or coords")
        if self.shared_grid is not None:
            grid = np.asarray(self.shared_grid, dtype=np.float64)
            if grid.ndim != 2 or grid.shape[0] != targets.shape[1]:
                raise ShapeError(f"grid {grid.shape} does not match targets {targets.shape}")
            object.__setattr__(self, "shared_grid", grid)
        else:
            coords = np.asarray(self.coords, dtype=np.float64)
            if coords.shape[:2] != targets.shape[:2]:
                raise ShapeError(f"coords {coords.shape} do not match targets {targets.shape}")
            object.__setattr__(self, "coords", coords)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (targets.shape[0],):
                raise ShapeError("labels must have one entry per sample")
            object.__setattr__(self, "labels", labels)
        ids = self.sample_ids
        if ids is None:
            ids = tuple(range(targets.shape[0]))
        object.__setattr__(self, "sample_ids", tuple(int(i) for i in ids))

    @property
    def n_samples(self) -> int:
        return self.targets.shape[0]

    @property
    def input_dim(self) -> int:
        return (self.shared_grid if self.shared_grid is not None else self.coords).shape[-1]


@dataclass(frozen=True)
class TrainSettings:
    epochs: int
    batch_size: int
    lr_hyper: float
    lr_latent: float
    precision: str = "f64"
    coords_per_step: int | None = None  # resample this many query points per step (3-D)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid epochs/batch_size: {self.epochs}/{self.batch_size}")
        if self.precision not in _DTYPES:
            raise ConfigError(f"precision must be one of {sorted(_DTYPES)}, got {self.precision!r}")


@dataclass
class TrainLog:
    """One row per epoch: mean per-value reconstruction MSE, mean latent
    gradient norm, and wall time in seconds."""

    epochs: list[int] = field(default_factory=list)
    mean_mse: list[float] = field(default_factory=list)
    mean_grad_norm: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def append(self, epoch, mse, gnorm, wall):
        self.epochs.append(int(epoch))
        self.mean_mse.append(float(mse))
        self.mean_grad_norm.append(float(gnorm))
        self.wall_time.append(float(wall))

    def to_csv(self) -> str:
        lines = ["epoch,mean_mse,mean_grad_norm,wall_time"]
        for row in zip(self.epochs, self.mean_mse, self.mean_grad_norm, self.wall_time):
            lines.append(f"{row[0]},{row[1]:.17g},{row[2]:.17g},{row[3]:.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    params: HyperNetParams
    latents: np.ndarray
    log: TrainLog


class _TorchAdam:
    """Bias-corrected Adam on one flat tensor, matching adam.adam_step."""

    def __init__(self, n, dtype, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = torch.zeros(n, dtype=dtype)
        self.v = torch.zeros(n, dtype=dtype)
        self.step = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, params: torch.Tensor, grad: torch.Tensor, lr: float, block: str):
        if not bool(torch.isfinite(grad).all()):
            raise NumericError(f"non-finite gradient in parameter block '{block}'")
        self.step += 1
        self.m.mul_(self.beta1).add_(grad, alpha=1.0 - self.beta1)
        self.v.mul_(self.beta2).addcmul_(grad, grad, value=1.0 - self.beta2)
        mhat = self.m / (1.0 - self.beta1**self.step)
        vhat = self.v / (1.0 - self.beta2**self.step)
        params.sub_(lr * mhat / (vhat.sqrt_() + self.eps))


class _LatentAdam:
    """Row-wise Adam over the latent table; moments advance only for rows
    that received a gradient."""

    def __init__(self, t, l, dtype, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = torch.zeros(t, l, dtype=dtype)
        self.v = torch.zeros(t, l, dtype=dtype)
        self.step = torch.zeros(t, 1, dtype=dtype)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, Z: torch.Tensor, rows: torch.Tensor, grad: torch.Tensor, lr: float):
        if not bool(torch.isfinite(grad).all()):
            raise NumericError("non-finite gradient in parameter block 'latents'")
        self.step[rows] += 1.0
        m = self.m[rows].mul_(self.beta1).add_(grad, alpha=1.0 - self.beta1)
        v = self.v[rows].mul_(self.beta2).addcmul_(grad, grad, value=1.0 - self.beta2)
        self.m[rows] = m
        self.v[rows] = v
        steps = self.step[rows]
        mhat = m / (1.0 - self.beta1**steps)
        vhat = v / (1.0 - self.beta2**steps)
        Z[rows] = Z[rows] - lr * mhat / (vhat.sqrt() + self.eps)


class _Workspace:
    """Preallocated buffers for chunked forward/backward passes."""

    def __init__(self, arch: HyperNetArch, n_coords: int, dtype: torch.dtype):
        self.arch = arch
        self.dtype = dtype
        self.n = n_coords
        main = arch.main
        B = CHUNK
        self.p = main.input_dim
        self.c = main.output_dim
        self.widths = list(main.hidden)
        self.X = torch.empty(B, n_coords, self.p, dtype=dtype)
        self.u = [torch.empty(B, n_coords, h, dtype=dtype) for h in self.widths]
        self.cos = [torch.empty(B, n_coords, h, dtype=dtype) for h in self.widths]
        self.delta = [torch.empty(B, n_coords, h, dtype=dtype) for h in self.widths]
        self.y = torch.empty(B, n_coords, self.c, dtype=dtype)
        self.r = torch.empty(B, n_coords, self.c, dtype=dtype)
        self.w = torch.empty(B, arch.output_dim, dtype=dtype)
        self.dw = torch.empty(B, arch.output_dim, dtype=dtype)
        self.trunk_h = [torch.empty(B, h, dtype=dtype) for h in arch.trunk]
        self.trunk_d = [torch.empty(B, h, dtype=dtype) for h in arch.trunk]
        if arch.heads > 0:
            n_blocks = len(main.layer_dims)
            self.head_h = [torch.empty(B, arch.heads, dtype=dtype) for _ in range(n_blocks)]
            self.head_d = [torch.empty(B, arch.heads, dtype=dtype) for _ in range(n_blocks)]
        self.gz = torch.empty(B, arch.latent_dim, dtype=dtype)
        self.loss = torch.empty(B, dtype=dtype)
        # scratch for per-sample weight gradients of the widest layer pair
        self.gW = [
            torch.empty(B, fo, fi, dtype=dtype) for fi, fo in main.layer_dims
        ]

    def main_views(self, w: torch.Tensor, B: int):
        """Per-layer ((B, fo, fi) weight view, (B, 1, fo) bias view) of generated w."""
        views = []
        for (fi, fo), (ws, bs) in zip(self.arch.main.layer_dims, self.arch.main.layer_slices()):
            W = w[:B, ws.start:ws.stop].view(B, fo, fi)
            b = w[:B, bs.start:bs.stop].view(B, 1, fo)
            views.append((W, b))
        return views


def _hyper_param_views(arch: HyperNetArch, v: torch.Tensor):
    tsl, bsl = hyper_layer_slices(arch)
    trunk = [
        (v[ws.start:ws.stop].view(fo, fi), v[bs.start:bs.stop])
        for (fi, fo), (ws, bs) in zip(arch.trunk_dims, tsl)
    ]
    blocks = []
    for dims, sls in zip(arch.head_dims(), bsl):
        blocks.append(
            [(v[ws.start:ws.stop].view(fo, fi), v[bs.start:bs.stop]) for (fi, fo), (ws, bs) in zip(dims, sls)]
        )
    return trunk, blocks


def _chunk_pass(ws: _Workspace, arch: HyperNetArch, v_views, gv_views, z: torch.Tensor,
                train_v: bool) -> None:
    """Forward + backward for one chunk. Expects ws.X and targets in ws.r
    (ws.r holds targets on entry and residuals on exit). Accumulates hyper
    gradients into gv_views when train_v, writes latent gradients to ws.gz
    and per-sample losses to ws.loss."""
    B = z.shape[0]
    omega = arch.main.omega0
    trunk, blocks = v_views
    g_trunk, g_blocks = gv_views

    # generator forward
    h = z
    for (W, b), buf in zip(trunk, ws.trunk_h):
        hb = buf[:B]
        torch.addmm(b, h, W.T, out=hb)
        torch.relu_(hb)
        h = hb
    w = ws.w[:B]
    if arch.heads == 0:
        W, b = blocks[0][0]
        torch.addmm(b, h, W.T, out=w)
    else:
        o = 0
        for block, hbuf in zip(blocks, ws.head_h):
            (W1, b1), (W2, b2) = block
            hh = hbuf[:B]
            torch.addmm(b1, h, W1.T, out=hh)
            torch.relu_(hh)
            seg = W2.shape[0]
            w[:, o:o + seg] = torch.addmm(b2, hh, W2.T)
            o += seg

    # main net forward: u_i = omega * (a W^T + b), a = sin(u)
    views = ws.main_views(ws.w, B)
    a_prev = ws.X[:B]
    for i, (Wv, bv) in enumerate(views[:-1]):
        u = ws.u[i][:B]
        torch.baddbmm(bv, a_prev, Wv.transpose(1, 2), beta=omega, alpha=omega, out=u)
        c = ws.cos[i][:B]
        torch.cos(u, out=c)
        c.mul_(omega)
        u.sin_()          # u now holds the activation
        a_prev = u
    Wo, bo = views[-1]
    y = ws.y[:B]
    torch.baddbmm(bo, a_prev, Wo.transpose(1, 2), out=y)

    # residuals and per-sample losses (ws.r holds targets on entry)
    r = ws.r[:B]
    r.neg_().add_(y)
    torch.sum(r * r, dim=(1, 2), out=ws.loss[:B])
    ws.loss[:B] *= 0.5

    # main net backward, accumulating per-sample flat gradient in ws.dw
    dw = ws.dw[:B]
    nlayers = len(views)
    slices = arch.main.layer_slices()
    delta = r
    for i in range(nlayers - 1, -1, -1):
        Wv, _ = views[i]
        a_in = ws.X[:B] if i == 0 else ws.u[i - 1][:B]
        gW = ws.gW[i][:B]
        torch.bmm(delta.transpose(1, 2), a_in, out=gW)
        ws_sl, bs_sl = slices[i]
        dw[:, ws_sl.start:ws_sl.stop] = gW.reshape(B, -1)
        dw[:, bs_sl.start:bs_sl.stop] = delta.sum(dim=1)
        if i > 0:
            d_prev = ws.delta[i - 1][:B]
            torch.bmm(delta, Wv, out=d_prev)
            d_prev.mul_(ws.cos[i - 1][:B])  # cos buffer carries the omega factor
            delta = d_prev

    # generator backward
    h_last = ws.trunk_h[-1][:B]
    if arch.heads == 0:
        (W, _), (gW, gb) = blocks[0][0], g_blocks[0][0]
        if train_v:
            gW.addmm_(dw.T, h_last)
            gb.add_(dw.sum(0))
        dtrunk = dw @ W
    else:
        dtrunk = None
        o = 0
        for block, gblock, hbuf, dbuf in zip(blocks, g_blocks, ws.head_h, ws.head_d):
            (W1, _), (W2, _) = block
            (gW1, gb1), (gW2, gb2) = gblock
            seg = W2.shape[0]
            dseg = dw[:, o:o + seg]
            o += seg
            hh = hbuf[:B]
            dhh = dbuf[:B]
            torch.mm(dseg, W2, out=dhh)
            dhh.mul_(hh > 0)
            if train_v:
                gW2.addmm_(dseg.T, hh)
                gb2.add_(dseg.sum(0))
                gW1.addmm_(dhh.T, h_last)
                gb1.add_(dhh.sum(0))
            contrib = dhh @ W1
            dtrunk = contrib if dtrunk is None else dtrunk.add_(contrib)

    delta_t = dtrunk
    for i in range(len(trunk) - 1, -1, -1):
        W, _ = trunk[i]
        gW, gb = g_trunk[i]
        delta_t.mul_(ws.trunk_h[i][:B] > 0)
        h_in = z if i == 0 else ws.trunk_h[i - 1][:B]
        if train_v:
            gW.addmm_(delta_t.T, h_in)
            gb.add_(delta_t.sum(0))
        out = ws.gz[:B] if i == 0 else ws.trunk_d[i - 1][:B]
        torch.mm(delta_t, W, out=out)
        delta_t = out


def _zeroed_grad_views(arch: HyperNetArch, gv: torch.Tensor):
    trunk, blocks = _hyper_param_views(arch, gv)
    return trunk, blocks


def _run(arch: HyperNetArch, data: TrainingData, settings: TrainSettings, seed: int,
         v0: np.ndarray, Z0: np.ndarray, train_v: bool, progress=None) -> TrainResult:
    dtype = _DTYPES[settings.precision]
    t = data.n_samples
    if data.input_dim != arch.main.input_dim:
        raise ShapeError(
            f"data has {data.input_dim}-dimensional coordinates, "
            f"main net expects {arch.main.input_dim}"
        )
    if data.targets.shape[2] != arch.main.output_dim:
        raise ShapeError(
            f"targets have {data.targets.shape[2]} channels, "
            f"main net emits {arch.main.output_dim}"
        )
    n_pool = data.targets.shape[1]
    n_step = settings.coords_per_step or n_pool
    resample = settings.coords_per_step is not None and data.coords is not None

    v_t = torch.tensor(v0, dtype=dtype)
    Z_t = torch.tensor(Z0, dtype=dtype)
    targets_t = torch.tensor(data.targets, dtype=dtype)
    coords_t = None
    if data.coords is not None:
        coords_t = torch.tensor(data.coords, dtype=dtype)

    ws = _Workspace(arch, n_step, dtype)
    if data.shared_grid is not None:
        grid_t = torch.tensor(data.shared_grid, dtype=dtype)
        ws.X.copy_(grid_t.unsqueeze(0).expand(CHUNK, n_pool, arch.main.input_dim))

    v_views = _hyper_param_views(arch, v_t)
    gv = torch.zeros(arch.param_count, dtype=dtype)
    gv_views = _zeroed_grad_views(arch, gv)
    v_adam = _TorchAdam(arch.param_count, dtype) if train_v else None
    z_adam = _LatentAdam(t, arch.latent_dim, dtype)

    rng = np.random.default_rng(seed)
    log = TrainLog()
    min_loss = np.inf
    start = time.perf_counter()
    for epoch in range(settings.epochs):
        perm = rng.permutation(t)
        epoch_loss = 0.0
        epoch_gnorm = 0.0
        for b0 in range(0, t, settings.batch_size):
            batch = perm[b0:b0 + settings.batch_size]
            if train_v:
                gv.zero_()
            batch_rows = torch.from_numpy(np.ascontiguousarray(batch))
            batch_grad = torch.empty(len(batch), arch.latent_dim, dtype=dtype)
            for c0 in range(0, len(batch), CHUNK):
                rows_np = batch[c0:c0 + CHUNK]
                B = len(rows_np)
                rows = torch.from_numpy(np.ascontiguousarray(rows_np))
                if resample:
                    idx = rng.integers(0, n_pool, size=(B, n_step))
                    idx_t = torch.from_numpy(idx)
                    for j in range(B):
                        ws.X[j].copy_(coords_t[rows_np[j]][idx_t[j]])
                        ws.r[j].copy_(targets_t[rows_np[j]][idx_t[j]])
                else:
                    torch.index_select(targets_t, 0, rows, out=ws.r[:B])
                z_chunk = Z_t[rows]
                _chunk_pass(ws, arch, v_views, gv_views, z_chunk, train_v)
                batch_grad[c0:c0 + B] = ws.gz[:B]
                epoch_loss += float(ws.loss[:B].sum())
                epoch_gnorm += float(torch.linalg.vector_norm(ws.gz[:B], dim=1).sum())
            if train_v:
                v_adam.update(v_t, gv, settings.lr_hyper, block="hypernet")
            z_adam.update(Z_t, batch_rows, batch_grad, settings.lr_latent)
        denom = t * n_step * arch.main.output_dim
        mean_mse = 2.0 * epoch_loss / denom if t else 0.0
        log.append(epoch, mean_mse, epoch_gnorm / max(t, 1), time.perf_counter() - start)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"loss became non-finite at epoch {epoch}")
        min_loss = min(min_loss, epoch_loss)
        if epoch == 0:
            first_loss = epoch_loss
        # transient optimizer spikes near a deep minimum are benign; only a
        # loss both far above its best and above its starting point aborts
        if epoch_loss > 100.0 * min_loss and epoch_loss > first_loss:
            raise TrainingError(f"loss diverged 100x above its minimum at epoch {epoch}")
        if progress is not None:
            progress(epoch, mean_mse)
    params = HyperNetParams(arch, v_t.to(torch.float64).numpy())
    latents = Z_t.to(torch.float64).numpy()
    return TrainResult(params, latents, log)


def train_joint(arch: HyperNetArch, data: TrainingData, settings: TrainSettings, seed: int,
                init: tuple[np.ndarray, np.ndarray] | None = None, progress=None) -> TrainResult:
    """Jointly optimize generator parameters and one latent per sample.

    Minimizes the summed half-squared reconstruction loss with Adam on the
    generator (lr_hyper) and on each latent (lr_latent) simultaneously; a
    latent's Adam moments advance only in steps where its sample appears.
    init optionally warm-starts from (v, latents) instead of seeding fresh
    parameters. Deterministic given (seed, settings, data).
    """
    if init is not None:
        v0, Z0 = init
        v0 = np.asarray(v0, dtype=np.float64)
        Z0 = np.asarray(Z0, dtype=np.float64)
        if Z0.shape != (data.n_samples, arch.latent_dim):
            raise ShapeError(f"warm-start latents {Z0.shape} do not match data")
    else:
        params, Z0 = init_weights(arch, data.n_samples, seed)
        v0 = params.v
    return _run(arch, data, settings, seed, v0, Z0, train_v=True, progress=progress)


def infer_latents(params: HyperNetParams, data: TrainingData, settings: TrainSettings,
                  seed: int, init_latents: np.ndarray | None = None,
                  progress=None) -> TrainResult:
    """Optimize latents for new samples against a frozen generator.

    The generator parameters are never written; the returned TrainResult
    carries the input params object untouched. Latents initialize from
    N(0, 0.01^2) under the given seed unless init_latents is provided.
    """
    arch = params.arch
    rng = np.random.default_rng(seed)
    if init_latents is None:
        Z0 = rng.normal(0.0, 0.01, size=(data.n_samples, arch.latent_dim))
    else:
        Z0 = np.asarray(init_latents, dtype=np.float64)
        if Z0.shape != (data.n_samples, arch.latent_dim):
            raise ShapeError(f"init latents {Z0.shape} do not match data")
    result = _run(arch, data, settings, seed, params.v, Z0, train_v=False, progress=progress)
    return TrainResult(params, result.latents, result.log)

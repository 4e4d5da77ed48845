"""Coordinate network and weight generator: forwards, hand-written reverse-mode
gradients, exact latent Jacobian, and forward-mode directional derivatives.

torch supplies the dense kernels (matmul, sin/cos); all gradient logic is
explicit here — no autograd. Public functions take and return float64 numpy
arrays; shapes are validated at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .arch import (
    HyperNetArch,
    HyperNetParams,
    MainNetArch,
    MainNetWeights,
    hyper_layer_slices,
)
from .errors import ShapeError, StateError

_F64 = torch.float64


def _t(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64))


def _main_views(arch: MainNetArch, w: torch.Tensor):
    """Per-layer (W(fan_out, fan_in), b) views into the flat tensor."""
    out = []
    for (fi, fo), (ws, bs) in zip(arch.layer_dims, arch.layer_slices()):
        out.append((w[ws.start:ws.stop].view(fo, fi), w[bs.start:bs.stop]))
    return out


@dataclass
class MainForwardCache:
    arch: MainNetArch
    w: torch.Tensor
    coords: torch.Tensor
    acts: list          # layer inputs: acts[0] = coords, acts[i] = sin output of layer i
    pre: list           # omega0-scaled pre-activations of hidden layers


def main_forward(weights: MainNetWeights, coords: np.ndarray):
    """Evaluate the sine network on a coordinate batch.

    coords: (n, input_dim) or (input_dim,). Returns (values (n, output_dim),
    cache for main_backward). Hidden layers apply sin(omega0 * (x W^T + b)),
    the final layer is linear.
    """
    arch = weights.arch
    single = np.ndim(coords) == 1
    c_np = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if c_np.shape[1] != arch.input_dim:
        raise ShapeError(f"coords have dim {c_np.shape[1]}, arch expects {arch.input_dim}")
    if not np.all(np.isfinite(c_np)):
        raise ShapeError("coords contain non-finite values")
    w = _t(weights.w)
    x = _t(c_np)
    layers = _main_views(arch, w)
    acts, pre = [x], []
    h = x
    for W, b in layers[:-1]:
        u = (h @ W.T + b) * arch.omega0
        h = torch.sin(u)
        pre.append(u)
        acts.append(h)
    Wo, bo = layers[-1]
    y = h @ Wo.T + bo
    cache = MainForwardCache(arch, w, x, acts, pre)
    out = y.numpy()
    return (out[0] if single else out), cache


def main_backward(cache: MainForwardCache, upstream: np.ndarray) -> np.ndarray:
    """Exact gradient of <upstream, f(w, .)> with respect to the flat weights."""
    if not isinstance(cache, MainForwardCache) or cache.acts is None:
        raise StateError("main_backward requires the cache from a prior main_forward")
    arch = cache.arch
    n = cache.coords.shape[0]
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if up.shape != (n, arch.output_dim):
        raise ShapeError(f"upstream shape {up.shape} != ({n}, {arch.output_dim})")
    delta = _t(up)
    layers = _main_views(arch, cache.w)
    grads = [None] * len(layers)
    Wo, _ = layers[-1]
    grads[-1] = (delta.T @ cache.acts[-1], delta.sum(0))
    delta = delta @ Wo
    for i in range(len(layers) - 2, -1, -1):
        W, _ = layers[i]
        delta = delta * torch.cos(cache.pre[i]) * arch.omega0
        grads[i] = (delta.T @ cache.acts[i], delta.sum(0))
        if i > 0:
            delta = delta @ W
    flat = torch.cat([torch.cat([gW.reshape(-1), gb]) for gW, gb in grads])
    return flat.numpy()


def main_jvp(weights: MainNetWeights, coords: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Directional derivatives of f(w, .) along weight directions.

    directions: (k, d). Returns (k, n, output_dim), row j = d/dt f(w + t*dir_j)
    at t=0, evaluated over all coords. Forward-mode, exact.
    """
    arch = weights.arch
    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if dirs.shape[1] != arch.param_count:
        raise ShapeError(f"directions have dim {dirs.shape[1]}, expected {arch.param_count}")
    c_np = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if c_np.shape[1] != arch.input_dim:
        raise ShapeError(f"coords have dim {c_np.shape[1]}, arch expects {arch.input_dim}")
    k = dirs.shape[0]
    w = _t(weights.w)
    dv = _t(dirs)
    x = _t(c_np)
    layers = _main_views(arch, w)
    dlayers = []
    for (fi, fo), (ws, bs) in zip(arch.layer_dims, arch.layer_slices()):
        dlayers.append((dv[:, ws.start:ws.stop].reshape(k, fo, fi), dv[:, bs.start:bs.stop]))
    h = x                       # (n, fi)
    dh = None                   # (k, n, fi), None means zero
    for i, (W, b) in enumerate(layers[:-1]):
        dW, db = dlayers[i]
        du = h @ dW.transpose(1, 2) + db.unsqueeze(1)
        if dh is not None:
            du = du + dh @ W.T
        u = (h @ W.T + b) * arch.omega0
        du = du * arch.omega0
        h = torch.sin(u)
        dh = torch.cos(u) * du
    Wo, bo = layers[-1]
    dWo, dbo = dlayers[-1]
    dy = h @ dWo.transpose(1, 2) + dbo.unsqueeze(1) + dh @ Wo.T
    return dy.numpy()


def _hyper_views(arch: HyperNetArch, v: torch.Tensor):
    tslices, bslices = hyper_layer_slices(arch)
    trunk = [
        (v[ws.start:ws.stop].view(fo, fi), v[bs.start:bs.stop])
        for (fi, fo), (ws, bs) in zip(arch.trunk_dims, tslices)
    ]
    blocks = []
    for dims, sls in zip(arch.head_dims(), bslices):
        blocks.append(
            [(v[ws.start:ws.stop].view(fo, fi), v[bs.start:bs.stop]) for (fi, fo), (ws, bs) in zip(dims, sls)]
        )
    return trunk, blocks


@dataclass
class HyperForwardCache:
    arch: HyperNetArch
    v: torch.Tensor
    z: torch.Tensor
    trunk_acts: list    # trunk_acts[0] = z, then post-ReLU activations
    head_acts: list     # per block: post-ReLU hidden (None for single linear)


def hyper_forward(params: HyperNetParams, z: np.ndarray):
    """Map a latent vector to the flat main-net weights. Returns (w, cache)."""
    arch = params.arch
    z_np = np.asarray(z, dtype=np.float64).reshape(-1)
    if z_np.size != arch.latent_dim:
        raise ShapeError(f"latent has length {z_np.size}, arch expects {arch.latent_dim}")
    v = _t(params.v)
    zt = _t(z_np)
    trunk, blocks = _hyper_views(arch, v)
    acts = [zt]
    h = zt
    for W, b in trunk:
        h = torch.relu(h @ W.T + b)
        acts.append(h)
    segs, head_acts = [], []
    for block in blocks:
        if len(block) == 1:
            W, b = block[0]
            segs.append(h @ W.T + b)
            head_acts.append(None)
        else:
            (W1, b1), (W2, b2) = block
            hh = torch.relu(h @ W1.T + b1)
            segs.append(hh @ W2.T + b2)
            head_acts.append(hh)
    w = torch.cat(segs)
    cache = HyperForwardCache(arch, v, zt, acts, head_acts)
    return w.numpy(), cache


def hyper_backward(cache: HyperForwardCache, upstream: np.ndarray):
    """Exact gradients of <upstream, phi(v, z)> wrt (flat v, latent z)."""
    if not isinstance(cache, HyperForwardCache) or cache.trunk_acts is None:
        raise StateError("hyper_backward requires the cache from a prior hyper_forward")
    arch = cache.arch
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if up.size != arch.output_dim:
        raise ShapeError(f"upstream has length {up.size}, expected {arch.output_dim}")
    dw = _t(up)
    trunk, blocks = _hyper_views(arch, cache.v)
    t_out = cache.trunk_acts[-1]
    gparts_heads = []
    dtrunk = torch.zeros_like(t_out)
    o = 0
    for block, hh in zip(blocks, cache.head_acts):
        if len(block) == 1:
            W, _ = block[0]
            seg = dw[o:o + W.shape[0]]
            o += W.shape[0]
            gparts_heads.append(torch.cat([torch.outer(seg, t_out).reshape(-1), seg]))
            dtrunk = dtrunk + seg @ W
        else:
            (W1, _), (W2, _) = block
            seg = dw[o:o + W2.shape[0]]
            o += W2.shape[0]
            dhh = (seg @ W2) * (hh > 0)
            gparts_heads.append(
                torch.cat([
                    torch.outer(dhh, t_out).reshape(-1), dhh,
                    torch.outer(seg, hh).reshape(-1), seg,
                ])
            )
            dtrunk = dtrunk + dhh @ W1
    gparts_trunk = []
    delta = dtrunk
    for i in range(len(trunk) - 1, -1, -1):
        W, _ = trunk[i]
        delta = delta * (cache.trunk_acts[i + 1] > 0)
        gparts_trunk.append(torch.cat([torch.outer(delta, cache.trunk_acts[i]).reshape(-1), delta]))
        delta = delta @ W
    grad_v = torch.cat(list(reversed(gparts_trunk)) + gparts_heads)
    return grad_v.numpy(), delta.numpy()


def hyper_jacobian_z(params: HyperNetParams, z: np.ndarray) -> np.ndarray:
    """Exact Jacobian d(phi)/d(z), shape (d, latent_dim).

    Assembled as the product of per-layer Jacobians, propagating the latent
    directions forward through the trunk and output blocks.
    """
    arch = params.arch
    w, cache = hyper_forward(params, z)
    trunk, blocks = _hyper_views(arch, cache.v)
    J = torch.eye(arch.latent_dim, dtype=_F64)
    for (W, _), act in zip(trunk, cache.trunk_acts[1:]):
        J = (W @ J) * (act > 0).unsqueeze(1)
    rows = []
    for block, hh in zip(blocks, cache.head_acts):
        if len(block) == 1:
            W, _ = block[0]
            rows.append(W @ J)
        else:
            (W1, _), (W2, _) = block
            Jh = (W1 @ J) * (hh > 0).unsqueeze(1)
            rows.append(W2 @ Jh)
    return torch.cat(rows, dim=0).numpy()


def siren_init_vector(arch: MainNetArch, rng: np.random.Generator) -> np.ndarray:
    """Fresh sine-network initialization in flat layout.

    First layer uniform(-1/input_dim, 1/input_dim); deeper layers
    uniform(+-sqrt(6/fan_in)/omega0); all biases zero.
    """
    parts = []
    for i, (fi, fo) in enumerate(arch.layer_dims):
        if i == 0:
            bound = 1.0 / arch.input_dim
        else:
            bound = np.sqrt(6.0 / fi) / arch.omega0
        parts.append(rng.uniform(-bound, bound, size=fi * fo))
        parts.append(np.zeros(fo))
    return np.concatenate(parts)


# The latent-dependent perturbation each output row adds on top of the
# sine-network base point at step 0, relative to that row's own base bound;
# keeps the spectral initialization regime intact while leaving the latents
# a usable influence on the generated weights.
OUT_REL = 0.15
LATENT_STD = 0.01


def _output_row_bounds(arch: MainNetArch) -> np.ndarray:
    """Per-flat-coordinate uniform bound of the sine-network initialization.

    Bias coordinates (zero in the base point) inherit their layer's weight
    bound so the generator can perturb them on the same scale.
    """
    bounds = np.empty(arch.param_count)
    for i, ((fi, fo), (ws, bs)) in enumerate(zip(arch.layer_dims, arch.layer_slices())):
        b = 1.0 / arch.input_dim if i == 0 else np.sqrt(6.0 / fi) / arch.omega0
        bounds[ws] = b
        bounds[bs] = b
    return bounds


def init_weights(arch: HyperNetArch, n_samples: int, seed: int):
    """Seeded initialization of generator parameters and per-sample latents.

    Latents ~ N(0, LATENT_STD^2). Trunk weights Kaiming-uniform
    (+-sqrt(6/fan_in)) with uniform(+-1/sqrt(fan_in)) biases. Final linear
    layer(s): the bias vector is a fresh sine-network initialization and the
    weight rows are uniform with per-row bounds OUT_REL times the target
    coordinate's own base bound, so generated weights start at a valid base
    point plus a proportionally small latent-dependent perturbation.
    """
    rng = np.random.default_rng(seed)
    Z = rng.normal(0.0, LATENT_STD, size=(n_samples, arch.latent_dim))
    parts = []
    for fi, fo in arch.trunk_dims:
        parts.append(rng.uniform(-np.sqrt(6.0 / fi), np.sqrt(6.0 / fi), size=fi * fo))
        parts.append(rng.uniform(-1.0 / np.sqrt(fi), 1.0 / np.sqrt(fi), size=fo))
    base = siren_init_vector(arch.main, rng)
    row_bounds = OUT_REL * _output_row_bounds(arch.main)
    if arch.heads == 0:
        fi = arch.trunk[-1]
        Wout = rng.uniform(-1.0, 1.0, size=(arch.output_dim, fi)) * row_bounds[:, None]
        parts.append(Wout.reshape(-1))
        parts.append(base)
    else:
        slices = arch.main.layer_slices()
        for (ws, bs), dims in zip(slices, arch.head_dims()):
            (f1, o1), (f2, o2) = dims
            parts.append(rng.uniform(-np.sqrt(6.0 / f1), np.sqrt(6.0 / f1), size=f1 * o1))
            parts.append(rng.uniform(-1.0 / np.sqrt(f1), 1.0 / np.sqrt(f1), size=o1))
            seg_bounds = np.concatenate([row_bounds[ws], row_bounds[bs]])
            W2 = rng.uniform(-1.0, 1.0, size=(o2, f2)) * seg_bounds[:, None]
            parts.append(W2.reshape(-1))
            parts.append(np.concatenate([base[ws], base[bs]]))
    v = np.concatenate(parts)
    return HyperNetParams(arch, v), Z

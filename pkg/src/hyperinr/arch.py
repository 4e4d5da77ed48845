"""Architecture descriptors and flat-vector weight layouts.

Canonical flat layout of a coordinate network's weights: for each layer in
order, the weight matrix in row-major order with shape (fan_out, fan_in),
followed by that layer's bias vector. The generator network uses the same
convention for its trunk, then either a single output layer or one
two-layer head per target layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class MainNetArch:
    """Sine-activated coordinate network: input_dim -> hidden... -> output_dim."""

    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int = 1
    omega0: float = 30.0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ShapeError(f"invalid main net dims: {self.input_dim} -> {self.output_dim}")
        if not self.hidden:
            raise ShapeError("main net needs at least one hidden layer")
        if any(h < 1 for h in self.hidden):
            raise ShapeError(f"invalid hidden widths: {self.hidden}")
        if not self.omega0 > 0:
            raise ShapeError(f"omega0 must be positive, got {self.omega0}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, output layer last."""
        dims = [self.input_dim, *self.hidden, self.output_dim]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def param_count(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_dims)

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """(weight_slice, bias_slice) into the flat vector, per layer."""
        out, o = [], 0
        for fi, fo in self.layer_dims:
            ws = slice(o, o + fi * fo)
            bs = slice(ws.stop, ws.stop + fo)
            out.append((ws, bs))
            o = bs.stop
        return out


@dataclass(frozen=True)
class HyperNetArch:
    """Latent-to-weights generator: ReLU trunk plus linear output or per-layer heads.

    heads == 0: a single linear layer maps trunk features to the full flat
    weight vector. heads > 0: one head per target layer, each a
    Linear(trunk_out, heads) + ReLU + Linear(heads, layer_slice) block whose
    outputs are concatenated in canonical layout order. The per-layer-head
    reading of a "heads" width is this artifact's documented choice.
    """

    latent_dim: int
    trunk: tuple[int, ...]
    main: MainNetArch
    heads: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ShapeError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not self.trunk or any(h < 1 for h in self.trunk):
            raise ShapeError(f"invalid trunk widths: {self.trunk}")
        if self.heads < 0:
            raise ShapeError(f"heads must be >= 0, got {self.heads}")
        object.__setattr__(self, "trunk", tuple(int(h) for h in self.trunk))

    @property
    def output_dim(self) -> int:
        return self.main.param_count

    @property
    def trunk_dims(self) -> list[tuple[int, int]]:
        dims = [self.latent_dim, *self.trunk]
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def head_dims(self) -> list[list[tuple[int, int]]]:
        """Per output block: list of (fan_in, fan_out) linear layers."""
        t_out = self.trunk[-1]
        if self.heads == 0:
            return [[(t_out, self.output_dim)]]
        blocks = []
        for fi, fo in self.main.layer_dims:
            seg = (fi + 1) * fo
            blocks.append([(t_out, self.heads), (self.heads, seg)])
        return blocks

    @property
    def param_count(self) -> int:
        n = sum((fi + 1) * fo for fi, fo in self.trunk_dims)
        for block in self.head_dims():
            n += sum((fi + 1) * fo for fi, fo in block)
        return n


@dataclass(frozen=True)
class MainNetWeights:
    """Flat weight vector bound to its architecture."""

    arch: MainNetArch
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size != self.arch.param_count:
            raise ShapeError(
                f"weight vector length {w.size} != arch parameter count {self.arch.param_count}"
            )
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class HyperNetParams:
    """Flat generator parameter vector bound to its architecture."""

    arch: HyperNetArch
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1 or v.size != self.arch.param_count:
            raise ShapeError(
                f"parameter vector length {v.size} != arch parameter count {self.arch.param_count}"
            )
        object.__setattr__(self, "v", v)


def unflatten_main(arch: MainNetArch, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Flat vector -> [(W(fan_out, fan_in), b(fan_out)), ...]."""
    w = np.asarray(w)
    if w.ndim != 1 or w.size != arch.param_count:
        raise ShapeError(f"expected flat vector of length {arch.param_count}, got shape {w.shape}")
    layers = []
    for (fi, fo), (ws, bs) in zip(arch.layer_dims, arch.layer_slices()):
        layers.append((w[ws].reshape(fo, fi), w[bs]))
    return layers


def flatten_main(arch: MainNetArch, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    if len(layers) != len(arch.layer_dims):
        raise ShapeError(f"expected {len(arch.layer_dims)} layers, got {len(layers)}")
    parts = []
    for (fi, fo), (W, b) in zip(arch.layer_dims, layers):
        W = np.asarray(W)
        b = np.asarray(b)
        if W.shape != (fo, fi) or b.shape != (fo,):
            raise ShapeError(f"layer shape mismatch: {W.shape}, {b.shape} vs ({fo}, {fi})")
        parts.append(W.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def hyper_layer_slices(arch: HyperNetArch) -> tuple[list[tuple[slice, slice]], list[list[tuple[slice, slice]]]]:
    """(trunk layer slices, per-block head layer slices) into the flat v."""
    o = 0
    trunk = []
    for fi, fo in arch.trunk_dims:
        ws = slice(o, o + fi * fo)
        bs = slice(ws.stop, ws.stop + fo)
        trunk.append((ws, bs))
        o = bs.stop
    blocks = []
    for block in arch.head_dims():
        cur = []
        for fi, fo in block:
            ws = slice(o, o + fi * fo)
            bs = slice(ws.stop, ws.stop + fo)
            cur.append((ws, bs))
            o = bs.stop
        blocks.append(cur)
    return trunk, blocks


def unflatten_hyper(arch: HyperNetArch, v: np.ndarray):
    """Flat vector -> (trunk [(W, b), ...], blocks [[(W, b), ...], ...])."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size != arch.param_count:
        raise ShapeError(f"expected flat vector of length {arch.param_count}, got shape {v.shape}")
    tslices, bslices = hyper_layer_slices(arch)
    trunk = [
        (v[ws].reshape(fo, fi), v[bs])
        for (fi, fo), (ws, bs) in zip(arch.trunk_dims, tslices)
    ]
    blocks = []
    for dims, sls in zip(arch.head_dims(), bslices):
        blocks.append([(v[ws].reshape(fo, fi), v[bs]) for (fi, fo), (ws, bs) in zip(dims, sls)])
    return trunk, blocks


def flatten_hyper(arch: HyperNetArch, trunk, blocks) -> np.ndarray:
    parts = []
    for (fi, fo), (W, b) in zip(arch.trunk_dims, trunk):
        if np.shape(W) != (fo, fi) or np.shape(b) != (fo,):
            raise ShapeError(f"trunk layer shape mismatch: {np.shape(W)} vs ({fo}, {fi})")
        parts.append(np.reshape(W, -1))
        parts.append(np.asarray(b))
    for dims, layers in zip(arch.head_dims(), blocks):
        for (fi, fo), (W, b) in zip(dims, layers):
            if np.shape(W) != (fo, fi) or np.shape(b) != (fo,):
                raise ShapeError(f"head layer shape mismatch: {np.shape(W)} vs ({fo}, {fi})")
            parts.append(np.reshape(W, -1))
            parts.append(np.asarray(b))
    return np.concatenate(parts)

"""Versioned binary container for trained model bundles.

Layout (little-endian): magic, u16 format version, 32-byte config
fingerprint, architecture descriptors, length-prefixed float64/int64 arrays,
a JSON metadata blob, and a trailing CRC32 over everything before it.
Round-trips are bit-exact.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import HyperNetArch, HyperNetParams, MainNetArch
from .errors import FormatError

BUNDLE_MAGIC = b"HINR"
BUNDLE_VERSION = 1


class BinWriter:
    def __init__(self):
        self.parts: list[bytes] = []

    def raw(self, b: bytes):
        self.parts.append(bytes(b))

    def u8(self, x: int):
        self.parts.append(struct.pack("<B", x))

    def u16(self, x: int):
        self.parts.append(struct.pack("<H", x))

    def u32(self, x: int):
        self.parts.append(struct.pack("<I", x))

    def u64(self, x: int):
        self.parts.append(struct.pack("<Q", x))

    def f64(self, x: float):
        self.parts.append(struct.pack("<d", x))

    def f64_array(self, a: np.ndarray):
        a = np.ascontiguousarray(a, dtype="<f8")
        self.u64(a.size)
        self.parts.append(a.tobytes())

    def i64_array(self, a: np.ndarray):
        a = np.ascontiguousarray(a, dtype="<i8")
        self.u64(a.size)
        self.parts.append(a.tobytes())

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def finish_with_crc(self) -> bytes:
        body = b"".join(self.parts)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class BinReader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def _take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"truncated file: need {n} bytes at offset {self.off}")
        b = self.data[self.off:self.off + n]
        self.off += n
        return b

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def f64_array(self) -> np.ndarray:
        n = self.u64()
        if n > (len(self.data) - self.off) // 8:
            raise FormatError(f"array length {n} exceeds file size at offset {self.off - 8}")
        return np.frombuffer(self._take(8 * n), dtype="<f8").copy()

    def i64_array(self) -> np.ndarray:
        n = self.u64()
        if n > (len(self.data) - self.off) // 8:
            raise FormatError(f"array length {n} exceeds file size at offset {self.off - 8}")
        return np.frombuffer(self._take(8 * n), dtype="<i8").copy()

    def text(self) -> str:
        n = self.u32()
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid utf-8 at offset {self.off - n}: {exc}") from exc


def check_magic_and_crc(data: bytes, magic: bytes) -> bytes:
    """Validate magic and trailing CRC32; returns the body without the CRC."""
    if len(data) < len(magic) + 6:
        raise FormatError(f"file too short ({len(data)} bytes)")
    if data[:len(magic)] != magic:
        raise FormatError(f"bad magic {data[:len(magic)]!r}, expected {magic!r}")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(body) & 0xFFFFFFFF
    if stored != actual:
        raise FormatError(f"checksum mismatch: stored 0x{stored:08x}, computed 0x{actual:08x}")
    return body


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file plus rename, so failures leave no partial output."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass
class ModelBundle:
    """Trained generator parameters plus per-sample latents and bookkeeping."""

    params: HyperNetParams
    latents: np.ndarray                  # (t, latent_dim) float64
    sample_ids: np.ndarray               # (t,) int64 dataset indices
    labels: np.ndarray | None            # (t,) int64 class ids, optional
    fingerprint: bytes                   # 32-byte config hash
    seed: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        if self.latents.ndim != 2 or self.latents.shape[1] != self.params.arch.latent_dim:
            raise FormatError(f"latents shape {self.latents.shape} does not match arch")
        if self.sample_ids.shape != (self.latents.shape[0],):
            raise FormatError("sample_ids must align with latent rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.latents.shape[0],):
                raise FormatError("labels must align with latent rows")
        if len(self.fingerprint) != 32:
            raise FormatError("fingerprint must be 32 bytes")

    @property
    def n_samples(self) -> int:
        return self.latents.shape[0]

    def latent_for(self, sample_id: int) -> np.ndarray:
        rows = np.flatnonzero(self.sample_ids == sample_id)
        if rows.size == 0:
            raise KeyError(f"sample id {sample_id} not in bundle")
        return self.latents[rows[0]]


def save_bundle(bundle: ModelBundle, path) -> None:
    w = BinWriter()
    w.raw(BUNDLE_MAGIC)
    w.u16(BUNDLE_VERSION)
    w.raw(bundle.fingerprint)
    main = bundle.params.arch.main
    w.u32(main.input_dim)
    w.u32(len(main.hidden))
    for h in main.hidden:
        w.u32(h)
    w.u32(main.output_dim)
    w.f64(main.omega0)
    arch = bundle.params.arch
    w.u32(arch.latent_dim)
    w.u32(len(arch.trunk))
    for h in arch.trunk:
        w.u32(h)
    w.u32(arch.heads)
    w.u64(bundle.seed)
    w.text(bundle.split)
    w.f64_array(bundle.params.v)
    w.u64(bundle.latents.shape[0])
    w.u64(bundle.latents.shape[1])
    w.raw(np.ascontiguousarray(bundle.latents, dtype="<f8").tobytes())
    w.i64_array(bundle.sample_ids)
    w.u8(1 if bundle.labels is not None else 0)
    if bundle.labels is not None:
        w.i64_array(bundle.labels)
    w.text(json.dumps(bundle.meta, sort_keys=True))
    atomic_write_bytes(path, w.finish_with_crc())


def load_bundle(path) -> ModelBundle:
    data = Path(path).read_bytes()
    body = check_magic_and_crc(data, BUNDLE_MAGIC)
    r = BinReader(body)
    r.raw(4)
    version = r.u16()
    if version != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {version}")
    fingerprint = r.raw(32)
    input_dim = r.u32()
    hidden = tuple(r.u32() for _ in range(r.u32()))
    output_dim = r.u32()
    omega0 = r.f64()
    main = MainNetArch(input_dim, hidden, output_dim, omega0)
    latent_dim = r.u32()
    trunk = tuple(r.u32() for _ in range(r.u32()))
    heads = r.u32()
    arch = HyperNetArch(latent_dim, trunk, main, heads=heads)
    seed = r.u64()
    split = r.text()
    v = r.f64_array()
    t = r.u64()
    l = r.u64()
    if l != latent_dim:
        raise FormatError(f"latent table width {l} != declared latent_dim {latent_dim}")
    if t * l > (len(body) - r.off) // 8:
        raise FormatError(f"latent table {t}x{l} exceeds file size")
    latents = np.frombuffer(r.raw(8 * t * l), dtype="<f8").reshape(t, l).copy()
    sample_ids = r.i64_array()
    labels = r.i64_array() if r.u8() else None
    meta = json.loads(r.text())
    if v.size != arch.param_count:
        raise FormatError(f"parameter vector length {v.size} != arch count {arch.param_count}")
    return ModelBundle(
        params=HyperNetParams(arch, v),
        latents=latents,
        sample_ids=sample_ids,
        labels=labels,
        fingerprint=fingerprint,
        seed=seed,
        split=split,
        meta=meta,
    )

"""Little-endian binary containers.

Every file starts with a 4-byte magic and a ``u32`` version.

``RKS1`` radial spokes::

    magic, u32 version, u32 n_spokes, u32 n_readout, f64 golden_angle_deg,
    f64 scale, u32 n_coils, u32 first_index,
    n_coils * n_spokes * n_readout * (f32 re, f32 im)   coil-major, spoke-major

Spoke ``s`` has chronological index ``first_index + s``.

``PSQ1`` projection-token sequences::

    magic, u32 version, u32 n_seq, u32 seq_len, u32 d_model,
    n_seq * (u32 subject, u32 coil, u32 start_index, f64 scale),
    n_seq * seq_len * d_model * f32

``RCI1`` complex image stacks (phantoms, coil maps, reconstructions)::

    magic, u32 version, u32 n_images, u32 height, u32 width,
    n_images * height * width * (f32 re, f32 im)

``CKP1`` model checkpoints::

    magic, u32 version, u32 config_len, config (UTF-8 JSON), u32 n_params,
    n_params * (u32 name_len, name, u32 rank, rank * u32 dim, f32 payload),
    u8 has_optimizer, [u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps,
    n_params * (m payload, v payload)]
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VERSION = 1
MAX_ELEMENTS = 1 << 31

_f32 = np.dtype("<f4")


class FormatError(ValueError):
    """Wrong magic, unsupported version or malformed header."""


class TruncationError(FormatError):
    """Payload shorter or longer than the header declares."""


class SizeOverflowError(FormatError):
    """Header declares more elements than the format allows."""


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncationError(f"{self.path}: unexpected end of file at byte {self.pos} (need {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int) -> np.ndarray:
        if count > MAX_ELEMENTS:
            raise SizeOverflowError(f"{self.path}: {count} elements exceeds limit")
        return np.frombuffer(self.take(count * 4), dtype=_f32).copy()

    def finish(self):
        if self.pos != len(self.buf):
            raise TruncationError(f"{self.path}: {len(self.buf) - self.pos} trailing bytes after payload")


def _open(path, magic: bytes) -> _Reader:
    r = _Reader(Path(path).read_bytes(), path)
    got = r.take(4) if len(r.buf) >= 4 else r.buf
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return r


def _atomic_write(path, chunks):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def _complex_to_f32(a: np.ndarray) -> bytes:
    out = np.empty(a.shape + (2,), dtype=_f32)
    out[..., 0] = a.real
    out[..., 1] = a.imag
    return out.tobytes()


def _f32_to_complex(flat: np.ndarray, shape) -> np.ndarray:
    pairs = flat.reshape(tuple(shape) + (2,)).astype(np.float64)
    return pairs[..., 0] + 1j * pairs[..., 1]


# ---------------------------------------------------------------- spokes

@dataclass
class SpokeFile:
    samples: np.ndarray  # (n_coils, n_spokes, n_readout) complex
    first_index: int
    golden_angle_deg: float
    scale: float = 1.0


def write_spokes(path, f: SpokeFile):
    s = np.asarray(f.samples)
    if s.ndim == 2:
        s = s[None]
    n_coils, n_spokes, n_readout = s.shape
    head = b"RKS1" + struct.pack("<IIIddII", VERSION, n_spokes, n_readout, f.golden_angle_deg, f.scale,
                                 n_coils, f.first_index)
    _atomic_write(path, [head, _complex_to_f32(s)])


def read_spokes(path) -> SpokeFile:
    r = _open(path, b"RKS1")
    n_spokes, n_readout, ga, scale, n_coils, first = r.unpack("IIddII")
    shape = (n_coils, n_spokes, n_readout)
    flat = r.array(2 * n_coils * n_spokes * n_readout)
    r.finish()
    return SpokeFile(_f32_to_complex(flat, shape), first, ga, scale)


# ---------------------------------------------------------------- token sequences

@dataclass
class SequenceFile:
    tokens: np.ndarray  # (n_seq, seq_len, d_model) float
    subject: np.ndarray
    coil: np.ndarray
    start_index: np.ndarray
    scale: np.ndarray


def write_sequences(path, f: SequenceFile):
    t = np.asarray(f.tokens)
    n, L, d = t.shape
    rec = np.zeros(n, dtype=[("subject", "<u4"), ("coil", "<u4"), ("start", "<u4"), ("scale", "<f8")])
    rec["subject"], rec["coil"], rec["start"], rec["scale"] = f.subject, f.coil, f.start_index, f.scale
    head = b"PSQ1" + struct.pack("<IIII", VERSION, n, L, d)
    _atomic_write(path, [head, rec.tobytes(), t.astype(_f32).tobytes()])


def read_sequences(path) -> SequenceFile:
    r = _open(path, b"PSQ1")
    n, L, d = r.unpack("III")
    if n * L * d > MAX_ELEMENTS:
        raise SizeOverflowError(f"{path}: {n}x{L}x{d} tokens exceeds limit")
    dt = np.dtype([("subject", "<u4"), ("coil", "<u4"), ("start", "<u4"), ("scale", "<f8")])
    rec = np.frombuffer(r.take(n * dt.itemsize), dtype=dt)
    tokens = r.array(n * L * d).reshape(n, L, d)
    r.finish()
    return SequenceFile(tokens, rec["subject"].astype(np.int64), rec["coil"].astype(np.int64),
                        rec["start"].astype(np.int64), rec["scale"].copy())


# ---------------------------------------------------------------- complex images

def write_images(path, images: np.ndarray):
    im = np.asarray(images)
    if im.ndim == 2:
        im = im[None]
    n, h, w = im.shape
    _atomic_write(path, [b"RCI1" + struct.pack("<IIII", VERSION, n, h, w), _complex_to_f32(im)])


def read_images(path) -> np.ndarray:
    r = _open(path, b"RCI1")
    n, h, w = r.unpack("III")
    flat = r.array(2 * n * h * w)
    r.finish()
    return _f32_to_complex(flat, (n, h, w))


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: dict
    params: dict  # name -> np.ndarray
    optimizer: dict | None = None  # step, lr, beta1, beta2, eps, m: list, v: list


def write_checkpoint(path, ck: Checkpoint):
    cfg = json.dumps(ck.config, sort_keys=True).encode()
    chunks = [b"CKP1", struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(ck.params))]
    shapes = []
    for name, arr in ck.params.items():
        arr = np.asarray(arr)
        nb = name.encode()
        chunks += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim),
                   struct.pack(f"<{arr.ndim}I", *arr.shape), arr.astype(_f32).tobytes()]
        shapes.append(arr.shape)
    if ck.optimizer is None:
        chunks.append(b"\x00")
    else:
        o = ck.optimizer
        chunks += [b"\x01", struct.pack("<Qdddd", o["step"], o["lr"], o["beta1"], o["beta2"], o["eps"])]
        for m, v, shape in zip(o["m"], o["v"], shapes):
            chunks += [np.asarray(m, dtype=_f32).reshape(shape).tobytes(),
                       np.asarray(v, dtype=_f32).reshape(shape).tobytes()]
    _atomic_write(path, chunks)


def read_checkpoint(path) -> Checkpoint:
    r = _open(path, b"CKP1")
    (clen,) = r.unpack("I")
    try:
        config = json.loads(r.take(clen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed config block") from exc
    (n,) = r.unpack("I")
    params = {}
    for _ in range(n):
        (nl,) = r.unpack("I")
        name = r.take(nl).decode()
        (rank,) = r.unpack("I")
        dims = r.unpack(f"{rank}I") if rank else ()
        params[name] = r.array(int(np.prod(dims))).reshape(dims)
    (has_opt,) = r.unpack("B")
    optimizer = None
    if has_opt:
        step, lr, b1, b2, eps = r.unpack("Qdddd")
        m, v = [], []
        for arr in params.values():
            m.append(r.array(arr.size).reshape(arr.shape))
            v.append(r.array(arr.size).reshape(arr.shape))
        optimizer = dict(step=step, lr=lr, beta1=b1, beta2=b2, eps=eps, m=m, v=v)
    r.finish()
    return Checkpoint(config, params, optimizer)

"""Global-descriptor place recognition over a database of images.

The built-in descriptor is a zero-mean, unit-norm 32x32 area-averaged
thumbnail. Learned descriptors can be plugged in through the GDSC file format:

    b"GDSC", u32 count, u32 dim, then per entry
    u16 name length, UTF-8 name, dim x f32 (little-endian)
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import DegenerateConfigurationError, ParseError, ValidationError

THUMB = 32
MAGIC = b"GDSC"


def _area_weights(n_in, n_out):
    # Row i averages input cells overlapping [i*n_in/n_out, (i+1)*n_in/n_out).
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / (n_in / n_out)


def thumbnail_descriptor(image):
    """1024-d descriptor of a 2-D grayscale image (rows = height)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValidationError("expected a 2-D grayscale image")
    h, w = img.shape
    if h < THUMB or w < THUMB:
        raise ValidationError(f"image must be at least {THUMB}x{THUMB}, got {w}x{h}")
    thumb = _area_weights(h, THUMB) @ img @ _area_weights(w, THUMB).T
    thumb -= thumb.mean()
    norm = np.linalg.norm(thumb)
    if norm <= 1e-12 * max(1.0, np.abs(img).max()):
        raise DegenerateConfigurationError("constant image has no descriptor")
    return (thumb / norm).ravel()


class DescriptorIndex:
    """Immutable name -> unit descriptor table with a linear-scan cosine query."""

    def __init__(self, names, descriptors):
        names = [str(n) for n in names]
        desc = np.array(descriptors, dtype=float)
        if desc.ndim != 2 or len(desc) != len(names):
            raise ValidationError("descriptors must be a (count, dim) array matching names")
        if len(set(names)) != len(names):
            raise ValidationError("descriptor names must be unique")
        if not np.all(np.isfinite(desc)):
            raise ValidationError("non-finite descriptor component")
        norms = np.linalg.norm(desc, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValidationError("descriptors must have unit L2 norm")
        desc.flags.writeable = False
        self.names = names
        self.descriptors = desc

    @property
    def dim(self):
        return self.descriptors.shape[1]

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self.names

    def get(self, name):
        return self.descriptors[self.names.index(name)]

    @classmethod
    def from_images(cls, images):
        """Build from ``{name: grayscale array}``."""
        names = list(images)
        return cls(names, [thumbnail_descriptor(images[n]) for n in names])


def query_top_k(index: DescriptorIndex, q, k=5):
    """Top-k ``(name, cosine)`` pairs, descending; ties by ascending name."""
    if len(index) == 0:
        raise ValidationError("empty descriptor index")
    q = np.asarray(q, dtype=float).ravel()
    if q.shape[0] != index.dim:
        raise ValidationError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValidationError("zero query descriptor")
    sims = index.descriptors @ (q / qn)
    order = sorted(range(len(index)), key=lambda i: (-sims[i], index.names[i]))
    return [(index.names[i], float(sims[i])) for i in order[:k]]


def write_descriptors(index: DescriptorIndex, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", len(index), index.dim))
        for name, d in zip(index.names, index.descriptors):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(d.astype("<f4").tobytes())


def load_external_descriptors(path) -> DescriptorIndex:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise ParseError(path, "missing GDSC magic", offset=0)
    count, dim = struct.unpack_from("<II", buf, 4)
    if dim == 0:
        raise ParseError(path, "descriptor dimension is zero", offset=8)
    pos = 12
    names, rows, starts = [], [], []
    for _ in range(count):
        if pos + 2 > len(buf):
            raise ParseError(path, "truncated entry header", offset=pos)
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + n + 4 * dim > len(buf):
            raise ParseError(path, "truncated entry", offset=pos)
        try:
            names.append(buf[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError:
            raise ParseError(path, "entry name is not UTF-8", offset=pos) from None
        pos += n
        starts.append(pos)
        rows.append(np.frombuffer(buf, dtype="<f4", count=dim, offset=pos).astype(float))
        pos += 4 * dim
    if pos != len(buf):
        raise ParseError(path, "trailing bytes after last entry (dimension mismatch?)", offset=pos)
    desc = np.array(rows).reshape(count, dim)
    finite = np.all(np.isfinite(desc), axis=1)
    if not finite.all():
        i = int(np.argmin(finite))
        raise ParseError(path, f"entry {i}: non-finite descriptor component", offset=starts[i])
    norms = np.linalg.norm(desc, axis=1)
    off = np.abs(norms - 1.0) > 1e-3
    if off.any():
        i = int(np.argmax(off))
        raise ParseError(path, f"entry {i}: descriptor norm deviates from 1 by more than 1e-3", offset=starts[i])
    try:
        return DescriptorIndex(names, desc / norms[:, None])
    except ValidationError as exc:
        raise ParseError(path, str(exc)) from None

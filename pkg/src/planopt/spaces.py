"""Typed planning-parameter spaces.

A :class:`CompositeSpace` is an ordered sequence of blocks. Each block is either a
box (:class:`IntervalBlock`) or a probability simplex (:class:`SimplexBlock`).
Optimizers work on unconstrained reals of length ``flat_dim`` and map them into
the space with :meth:`CompositeSpace.project`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

TOL = 1e-9

_KIND_INTERVAL = 0
_KIND_SIMPLEX = 1


@dataclass(frozen=True)
class IntervalBlock:
    dim: int
    low: float
    high: float

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"IntervalBlock.dim must be positive, got {self.dim}")
        if not (np.isfinite(self.low) and np.isfinite(self.high)) or not self.low < self.high:
            raise ValueError(f"IntervalBlock needs finite low < high, got [{self.low}, {self.high}]")

    def sample(self, count, rng):
        return rng.uniform(self.low, self.high, size=(count, self.dim))

    def project(self, raw):
        return self.low + (self.high - self.low) * _sigmoid(raw)

    def unproject(self, values):
        u = (np.asarray(values, dtype=float) - self.low) / (self.high - self.low)
        u = np.clip(u, 1e-15, 1 - 1e-15)
        return np.log(u) - np.log1p(-u)

    def check(self, v, tol=TOL):
        if np.any(~np.isfinite(v)):
            return "non-finite value"
        if np.any(v < self.low - tol) or np.any(v > self.high + tol):
            return f"value outside [{self.low}, {self.high}]"
        return None


@dataclass(frozen=True)
class SimplexBlock:
    dim: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"SimplexBlock.dim must be positive, got {self.dim}")

    def sample(self, count, rng):
        # normalized unit-rate exponentials == flat Dirichlet
        e = rng.standard_exponential(size=(count, self.dim))
        return e / e.sum(axis=1, keepdims=True)

    def project(self, raw):
        return _softmax(raw)

    def unproject(self, values):
        v = np.clip(np.asarray(values, dtype=float), 1e-300, None)
        logv = np.log(v)
        return logv - logv.mean(axis=-1, keepdims=True)

    def check(self, v, tol=TOL):
        if np.any(~np.isfinite(v)):
            return "non-finite value"
        if np.any(v < -tol):
            return "negative entry"
        s = v.sum()
        if abs(s - 1.0) > tol:
            return f"sum != 1 (sum={s!r})"
        return None


Block = Union[IntervalBlock, SimplexBlock]


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Assignment:
    """One point of a composite space, stored block by block."""

    values: tuple

    @property
    def flat(self):
        return np.concatenate([np.asarray(v, dtype=float) for v in self.values])

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


@dataclass(frozen=True)
class Violation:
    block: int
    message: str
    tol: float

    def __str__(self):
        return f"block {self.block}: {self.message} (tol={self.tol:g})"


class CompositeSpace:
    def __init__(self, blocks: Sequence[Block]):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("CompositeSpace needs at least one block")
        for b in blocks:
            if not isinstance(b, (IntervalBlock, SimplexBlock)):
                raise TypeError(f"unsupported block type {type(b).__name__}")
        self.blocks = blocks
        offsets = np.cumsum([0] + [b.dim for b in blocks])
        self.slices = tuple(slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:]))
        self.flat_dim = int(offsets[-1])

    def __repr__(self):
        return f"CompositeSpace({list(self.blocks)!r})"

    def __eq__(self, other):
        return isinstance(other, CompositeSpace) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def split(self, flat):
        flat = np.asarray(flat, dtype=float)
        return tuple(flat[..., s] for s in self.slices)

    def assignment(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.flat_dim,):
            raise ValueError(f"expected flat vector of length {self.flat_dim}, got shape {flat.shape}")
        return Assignment(tuple(v.copy() for v in self.split(flat)))

    def as_flat(self, x):
        """Accept an Assignment, a sequence of per-block vectors or a flat vector."""
        if isinstance(x, Assignment):
            return x.flat
        if isinstance(x, (list, tuple)) and len(x) == len(self.blocks) and all(
            np.ndim(v) == 1 for v in x
        ):
            return np.concatenate([np.asarray(v, dtype=float) for v in x])
        return np.asarray(x, dtype=float)

    def sample(self, count, rng):
        """Uniform samples as a ``(count, flat_dim)`` array."""
        if count < 1:
            raise ValueError("count must be >= 1")
        return np.concatenate([b.sample(count, rng) for b in self.blocks], axis=1)

    def project(self, raw):
        """Map unconstrained reals (``(..., flat_dim)``) into the space."""
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1:] != (self.flat_dim,):
            raise ValueError(f"raw must have trailing length {self.flat_dim}, got shape {raw.shape}")
        if not np.all(np.isfinite(raw)):
            bad = np.flatnonzero(~np.isfinite(raw.reshape(-1, self.flat_dim)).any(axis=0))
            raise ValueError(f"non-finite raw values at coordinates {bad.tolist()}")
        return np.concatenate([b.project(raw[..., s]) for b, s in zip(self.blocks, self.slices)], axis=-1)

    def unproject(self, values):
        """A pre-image of ``values`` under :meth:`project` (interior points only)."""
        values = np.asarray(values, dtype=float)
        return np.concatenate(
            [b.unproject(values[..., s]) for b, s in zip(self.blocks, self.slices)], axis=-1
        )

    def validate(self, x, tol=TOL):
        """Return None when ``x`` is valid, otherwise the first :class:`Violation`."""
        flat = self.as_flat(x)
        if flat.shape != (self.flat_dim,):
            return Violation(-1, f"length {flat.size} != flat_dim {self.flat_dim}", tol)
        for i, (b, s) in enumerate(zip(self.blocks, self.slices)):
            msg = b.check(flat[s], tol)
            if msg is not None:
                return Violation(i, msg, tol)
        return None

    def is_valid(self, x, tol=TOL):
        return self.validate(x, tol) is None

    # -- serialization --------------------------------------------------------

    def header_bytes(self):
        out = [struct.pack("<I", len(self.blocks))]
        for b in self.blocks:
            if isinstance(b, IntervalBlock):
                out.append(struct.pack("<BIdd", _KIND_INTERVAL, b.dim, b.low, b.high))
            else:
                out.append(struct.pack("<BIdd", _KIND_SIMPLEX, b.dim, 0.0, 0.0))
        return b"".join(out)

    @classmethod
    def read_header(cls, buf, offset=0):
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        blocks = []
        for _ in range(n):
            kind, dim, low, high = struct.unpack_from("<BIdd", buf, offset)
            offset += struct.calcsize("<BIdd")
            if kind == _KIND_INTERVAL:
                blocks.append(IntervalBlock(dim, low, high))
            elif kind == _KIND_SIMPLEX:
                blocks.append(SimplexBlock(dim))
            else:
                raise ValueError(f"unknown block kind {kind}")
        return cls(blocks), offset

    def to_bytes(self, x):
        flat = self.as_flat(x)
        if flat.shape != (self.flat_dim,):
            raise ValueError(f"expected {self.flat_dim} values, got {flat.size}")
        return self.header_bytes() + flat.astype("<f8").tobytes()

    def from_bytes(self, buf):
        space, offset = CompositeSpace.read_header(buf)
        if space != self:
            raise ValueError(f"block header {space!r} does not match {self!r}")
        flat = np.frombuffer(buf, dtype="<f8", count=self.flat_dim, offset=offset)
        return self.assignment(flat.astype(float))


def sample_uniform(space, count, rng):
    """``count`` uniform assignments drawn from ``space``."""
    return [space.assignment(row) for row in space.sample(count, rng)]


def project(space, raw):
    return space.assignment(space.project(raw))


def validate(space, assignment, tol=TOL):
    return space.validate(assignment, tol)

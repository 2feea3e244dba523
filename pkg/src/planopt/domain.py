"""Domain abstraction: instance distribution, parameter space and planner."""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .board import GridBoard

MASK64 = (1 << 64) - 1
SPLITS = ("train", "test")
DEFAULT_SET_SIZE = 1000


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed, tag):
    """Seed of the named stream ``tag`` under a user seed."""
    key = int.from_bytes(hashlib.blake2b(str(tag).encode(), digest_size=8).digest(), "little")
    return splitmix64((int(seed) & MASK64) ^ key)


def stream_rng(seed, *keys):
    """Generator for one named/indexed sub-stream; independent of call order."""
    entropy = [int(seed) & MASK64] + [derive_seed(0, k) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class PlannerResult:
    objective: float
    extras: dict = field(default_factory=dict)

    def __getitem__(self, key):
        if key == "objective":
            return self.objective
        return self.extras[key]


class InvalidAssignment(ValueError):
    pass


class Domain:
    """Base class for planner optimization domains.

    Subclasses set ``name``, ``space`` and ``instance_dim`` and implement
    ``sample_instance``, ``encode_instance`` and ``_plan``.
    """

    name = "Domain"
    space = None
    instance_dim = 0
    objective_range = (-1.0, 0.0)
    size = 0

    @property
    def identifier(self):
        return f"{self.name}[{self.size}]"

    def __repr__(self):
        return self.identifier

    def __eq__(self, other):
        return type(self) is type(other) and self.identifier == other.identifier

    def __hash__(self):
        return hash(self.identifier)

    def composite_parameter_space(self):
        return self.space

    def sample_instance(self, rng):
        raise NotImplementedError

    def encode_instance(self, instance):
        raise NotImplementedError

    def encode_many(self, instances):
        return np.stack([self.encode_instance(c) for c in instances]) if len(instances) else np.zeros(
            (0, self.instance_dim)
        )

    def _plan(self, instance, x, rng):
        raise NotImplementedError

    def create_problem_set(self, split="train", seed=0, count=DEFAULT_SET_SIZE):
        return create_problem_set(self, split, seed, count)

    def create_planner(self):
        return lambda instance, x, rng, extras=(): planner_call(self, instance, x, rng)


@dataclass(frozen=True)
class ProblemSet:
    domain_name: str
    size: int
    split: str
    seed: int
    instances: tuple

    def __len__(self):
        return len(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    def __iter__(self):
        return iter(self.instances)


def create_problem_set(domain, split="train", seed=0, count=DEFAULT_SET_SIZE):
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, split))
    instances = tuple(domain.sample_instance(rng) for _ in range(count))
    return ProblemSet(domain.name, domain.size, split, int(seed) & MASK64, instances)


def planner_call(domain, instance, x, rng):
    """One sample of the planning objective for ``instance`` under parameters ``x``."""
    flat = domain.space.as_flat(x)
    bad = domain.space.validate(flat)
    if bad is not None:
        raise InvalidAssignment(f"{domain.identifier}: invalid assignment, {bad}")
    return domain._plan(instance, flat, rng)


def encode_instance(domain, instance):
    return domain.encode_instance(instance)


# -- POPSET files ---------------------------------------------------------------

SET_MAGIC = b"POPSET1"


class ProblemSetFormatError(ValueError):
    pass


def _board_bytes(board):
    n = board.size
    bits = np.packbits(board.occupancy.ravel().astype(np.uint8), bitorder="little")
    return (
        struct.pack("<I", n)
        + bits.tobytes()
        + struct.pack("<IIII", board.start[0], board.start[1], board.goal[0], board.goal[1])
    )


def save_problem_set(problem_set, path):
    name = problem_set.domain_name.encode()
    parts = [
        SET_MAGIC,
        struct.pack("<H", len(name)),
        name,
        struct.pack("<IBQI", problem_set.size, SPLITS.index(problem_set.split), problem_set.seed, len(problem_set)),
    ]
    for board in problem_set.instances:
        if not isinstance(board, GridBoard):
            raise TypeError("POPSET files hold GridBoard instances only")
        parts.append(_board_bytes(board))
    body = b"".join(parts)
    crc = zlib.crc32(body)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", crc))
    return crc


def load_problem_set(path, domain=None):
    """Read a POPSET file; with ``domain`` given, its name and size must match."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:6] != SET_MAGIC[:6]:
        raise ProblemSetFormatError(f"{path}: not a problem-set file")
    if buf[:7] != SET_MAGIC:
        raise ProblemSetFormatError(f"{path}: unsupported version {buf[:7]!r}, expected {SET_MAGIC!r}")
    if len(buf) < 11 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise ProblemSetFormatError(f"{path}: checksum failure (truncated or corrupt file)")
    off = 7
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    name = buf[off : off + n].decode()
    off += n
    size, split_i, seed, count = struct.unpack_from("<IBQI", buf, off)
    off += struct.calcsize("<IBQI")
    if domain is not None and (name != domain.name or size != domain.size):
        raise ProblemSetFormatError(
            f"{path}: domain mismatch, file holds {name}[{size}], expected {domain.identifier}"
        )
    instances = []
    for _ in range(count):
        (s,) = struct.unpack_from("<I", buf, off)
        off += 4
        nbytes = (s * s + 7) // 8
        bits = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=off)
        off += nbytes
        occ = np.unpackbits(bits, count=s * s, bitorder="little").astype(bool).reshape(s, s)
        sr, sc, gr, gc = struct.unpack_from("<IIII", buf, off)
        off += 16
        instances.append(GridBoard(occ, (sr, sc), (gr, gc)))
    if off != len(buf) - 4:
        raise ProblemSetFormatError(f"{path}: {len(buf) - 4 - off} trailing bytes")
    return ProblemSet(name, size, SPLITS[split_i], seed, tuple(instances))

"""Binary record archives and the flat text configuration format.

Archive layout (little-endian)::

    b"FTRM" | version u32 | kind u32 | payload length u64 | payload

The payload is a fixed, kind-specific sequence of arrays, each written as
``rank u32 | dims u64 * rank | float64 data (row-major)``.  Integers, flags
and scalars are stored as rank-0 or rank-1 float64 arrays; short strings as
their byte codes.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ftrom.errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    StorageError,
    VersionError,
)
from ftrom.mesh import MappingDofs, StructuredQuadMesh
from ftrom.registration.clustering import LandmarkSet
from ftrom.registration.rbf import RbfWarp
from ftrom.rom import LmTrace, RomBases, RomSolution, SnapshotRecord

MAGIC = b"FTRM"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_RANK = struct.Struct("<I")


@dataclass(frozen=True)
class DiscreteState:
    """Cell values of one solve, tagged with its parameter."""

    Q: np.ndarray
    mu: float


# --------------------------------------------------------------------------- arrays


def _encode_array(a) -> bytes:
    # not ascontiguousarray: it promotes rank-0 scalars to rank 1
    a = np.asarray(a, dtype="<f8")
    head = _RANK.pack(a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


class _Reader:
    def __init__(self, buf: bytes, offset: int, source: str):
        self.buf, self.pos, self.source = buf, offset, source

    def _take(self, n: int, what: str) -> bytes:
        available = len(self.buf) - self.pos
        if n > available:
            raise FormatError(f"{self.source}: truncated {what}: expected {n} bytes, {available} available")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self) -> np.ndarray:
        (rank,) = _RANK.unpack(self._take(_RANK.size, "array rank"))
        if rank > 8:
            raise FormatError(f"{self.source}: implausible array rank {rank}")
        shape = struct.unpack(f"<{rank}Q", self._take(8 * rank, "array dims"))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = self._take(8 * count, "array data")
        return np.frombuffer(data, dtype="<f8").astype(float).reshape(shape)


def _text(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).astype(float)


def _untext(a: np.ndarray) -> str:
    return bytes(a.astype(np.uint8)).decode("utf-8")


# --------------------------------------------------------------------------- record kinds


def _mesh_out(m: StructuredQuadMesh):
    return [np.array([m.nx, m.nt], dtype=float), np.array(m.bounds), m.ref_nodes]


def _mesh_in(arrs) -> StructuredQuadMesh:
    dims, bounds, nodes = arrs
    nodes = nodes.copy()
    nodes.setflags(write=False)
    return StructuredQuadMesh(int(dims[0]), int(dims[1]), tuple(float(b) for b in bounds), nodes)


def _snapshot_out(s: SnapshotRecord):
    return [np.array(s.mu), s.Q, s.dofs.phys_nodes, s.Q_aligned]


def _snapshot_in(arrs) -> SnapshotRecord:
    mu, Q, nodes, Qa = arrs
    return SnapshotRecord(float(mu), Q, MappingDofs(nodes), Qa)


def _warp_out(w: RbfWarp):
    active = np.zeros((0, 2)) if w.active is None else np.asarray(w.active, dtype=float)
    return [w.centers, np.array(w.radius), w.weights, active]


def _warp_in(arrs) -> RbfWarp:
    centers, radius, weights, active = arrs
    return RbfWarp(centers, float(radius), weights, None if active.size == 0 else active.astype(bool))


_BASES_FIELDS = [f.name for f in fields(RomBases)]


def _solution_out(s: RomSolution):
    t = s.trace
    scalars = np.array([s.mu, s.objective, s.weighted_norm, float(s.converged), s.n_iter])
    trace = [np.asarray(t.objectives, dtype=float), np.asarray(t.lambdas, dtype=float),
             np.asarray(t.accepted, dtype=float), np.asarray(t.grad_norms, dtype=float)]
    return [scalars, s.a, s.y, s.Q_hat, s.x_hat, _text(s.reason), *trace]


def _solution_in(arrs) -> RomSolution:
    scalars, a, y, Q_hat, x_hat, reason, objs, lams, acc, grads = arrs
    trace = LmTrace(objs.tolist(), lams.tolist(), [bool(v) for v in acc], grads.tolist())
    mu, objective, wnorm, converged, n_iter = scalars.tolist()
    return RomSolution(mu, a, y, Q_hat, x_hat, objective, wnorm, bool(converged), int(n_iter), _untext(reason), trace)


# kind tag -> (type, number of arrays, encoder, decoder)
_KINDS = {
    1: (StructuredQuadMesh, 3, _mesh_out, _mesh_in),
    2: (DiscreteState, 2, lambda s: [np.array(s.mu), s.Q], lambda a: DiscreteState(a[1], float(a[0]))),
    3: (MappingDofs, 1, lambda d: [d.phys_nodes], lambda a: MappingDofs(a[0])),
    4: (SnapshotRecord, 4, _snapshot_out, _snapshot_in),
    5: (LandmarkSet, 3, lambda s: [s.centroids, s.endpoints, s.boundary], lambda a: LandmarkSet(*a)),
    6: (RbfWarp, 4, _warp_out, _warp_in),
    7: (
        RomBases,
        len(_BASES_FIELDS),
        lambda b: [getattr(b, n) for n in _BASES_FIELDS],
        lambda a: RomBases(**dict(zip(_BASES_FIELDS, a))),
    ),
    8: (RomSolution, 10, _solution_out, _solution_in),
}
_KIND_OF = {cls: kind for kind, (cls, *_rest) in _KINDS.items()}


def record_kind(record) -> int:
    try:
        return _KIND_OF[type(record)]
    except KeyError:
        raise InvalidArgumentError(f"no archive kind for {type(record).__name__}") from None


def encode_record(record) -> bytes:
    kind = record_kind(record)
    _, n_arrays, encode, _ = _KINDS[kind]
    arrays = encode(record)
    assert len(arrays) == n_arrays
    payload = b"".join(_encode_array(a) for a in arrays)
    return _HEADER.pack(MAGIC, VERSION, kind, len(payload)) + payload


def decode_record(buf: bytes, source: str = "<bytes>"):
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: truncated header: expected {_HEADER.size} bytes, {len(buf)} available")
    magic, version, kind, length = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionError(f"{source}: archive version {version}, this reader supports {VERSION}")
    if kind not in _KINDS:
        raise FormatError(f"{source}: unknown record kind {kind}")
    available = len(buf) - _HEADER.size
    if length > available:
        raise FormatError(f"{source}: truncated payload: expected {length} bytes, {available} available")
    if length < available:
        raise FormatError(f"{source}: {available - length} trailing bytes after payload")
    _, n_arrays, _, decode = _KINDS[kind]
    reader = _Reader(buf, _HEADER.size, source)
    arrays = [reader.array() for _ in range(n_arrays)]
    if reader.pos != len(buf):
        raise FormatError(f"{source}: payload length disagrees with its arrays")
    return decode(arrays)


def write_record(path, record) -> None:
    data = encode_record(record)
    path = Path(path)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise StorageError(f"{path}: cannot write record: {exc}") from exc


def read_record(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"{path}: cannot read record: {exc}") from exc
    return decode_record(data, str(path))


# --------------------------------------------------------------------------- configuration

_SECTION = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_]*)\]$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_INT = re.compile(r"^[+-]?\d+$")


def _scalar(token: str, line: int):
    if _INT.match(token):
        return int(token)
    try:
        return float(token)
    except ValueError:
        pass
    if not token or any(ch in token for ch in "=[]"):
        raise ConfigError(f"malformed value {token!r}", line)
    return token


def _value(raw: str, line: int):
    raw = raw.strip()
    if "," in raw:
        return [_scalar(tok.strip(), line) for tok in raw.split(",")]
    if raw == "":
        return []
    return _scalar(raw, line)


def parse_config(text: str, known_keys=None) -> dict:
    """``key = value`` lines with ``#`` comments and ``[section]`` headers.

    Keys inside a section are returned as ``section.key``.  Integers parse as
    ``int``, other numbers as ``float``, comma-separated values as lists and
    an empty value as an empty list.  With ``known_keys`` given, any other key
    is rejected along with its line number.
    """
    out: dict = {}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, raw = line.split("=", 1)
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", lineno)
        name = f"{section}.{key}" if section else key
        if known_keys is not None and name not in known_keys:
            raise ConfigError(f"unknown key {name!r}", lineno)
        if name in out:
            raise ConfigError(f"duplicate key {name!r}", lineno)
        out[name] = _value(raw, lineno)
    return out

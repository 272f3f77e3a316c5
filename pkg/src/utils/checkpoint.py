"""
Process-tensor container and CSV writers.

Layout (little endian): b"PTMP", u32 version, u32 T, u32 S, f64 dt, then per node u32 chi_out, u32 chi_in and the
row-major complex128 tensor (chi_out, chi_in, S^2, S^2). A node written with chi_in = 0 is diagonal and stores only
(chi_out, S^2, S^2); its incoming bond equals chi_out. Two trailers follow: b"CAPS" with one (u32 length,
complex128 data) entry per bond, and b"META" with a u32 length and a JSON document of the builder metadata.
"""
import io
import os
import typing

import jsonpickle
import numpy as np
from jax import numpy as jnp
from smart_open import open

from src.constants import FileFormatError, PtFormat
from src.ptmpo import ProcessTensor, PtNode

U32 = np.dtype("<u4")
F64 = np.dtype("<f8")
C128 = np.dtype("<c16")


def _u32(value: int) -> bytes:
    return np.asarray(value, U32).tobytes()


def encode(pt: ProcessTensor) -> bytes:
    buffer = io.BytesIO()
    buffer.write(PtFormat.magic)
    buffer.write(_u32(PtFormat.version))
    buffer.write(_u32(pt.steps))
    buffer.write(_u32(pt.system_dim))
    buffer.write(np.asarray(pt.dt, F64).tobytes())
    for node in pt.nodes:
        tensor = np.asarray(node.tensor, C128)
        buffer.write(_u32(node.chi_out))
        buffer.write(_u32(0 if node.diagonal else node.chi_in))
        buffer.write(np.ascontiguousarray(tensor).tobytes())
    buffer.write(b"CAPS")
    for cap in pt.caps:
        buffer.write(_u32(cap.shape[0]))
        buffer.write(np.asarray(cap, C128).tobytes())
    meta = jsonpickle.encode(pt.metadata, unpicklable=False).encode()
    buffer.write(b"META")
    buffer.write(_u32(len(meta)))
    buffer.write(meta)
    return buffer.getvalue()


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise FileFormatError(f"{self.path}: truncated file while reading {what} "
                                  f"(need {size} bytes at offset {self.offset}, file has {len(self.data)})")
        out = self.data[self.offset:self.offset + size]
        self.offset += size
        return out

    def u32(self, what: str) -> int:
        return int(np.frombuffer(self.take(4, what), U32)[0])

    def array(self, dtype: np.dtype, shape: typing.Tuple[int, ...], what: str) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(count * dtype.itemsize, what), dtype).reshape(shape).copy()


def decode(data: bytes, path: str = "<bytes>") -> ProcessTensor:
    reader = _Reader(data, path)
    magic = reader.take(4, "magic")
    if magic != PtFormat.magic:
        raise FileFormatError(f"{path}: bad magic {magic!r}, expected {PtFormat.magic!r}")
    version = reader.u32("version")
    if version != PtFormat.version:
        raise FileFormatError(f"{path}: unsupported format version {version}, expected {PtFormat.version}")
    steps = reader.u32("T")
    system_dim = reader.u32("S")
    dt = float(reader.array(F64, (1,), "dt")[0])
    dim = system_dim ** 2
    nodes = []
    previous = 1
    for idx in range(steps):
        chi_out = reader.u32(f"node {idx} chi_out")
        chi_in = reader.u32(f"node {idx} chi_in")
        diagonal = chi_in == 0
        if diagonal:
            chi_in = chi_out
        if chi_in != previous:
            raise FileFormatError(f"{path}: node {idx} has chi_in={chi_in}, previous bond is {previous}")
        shape = (chi_out, dim, dim) if diagonal else (chi_out, chi_in, dim, dim)
        nodes.append(PtNode(jnp.asarray(reader.array(C128, shape, f"node {idx}")), diagonal))
        previous = chi_out
    if previous != 1:
        raise FileFormatError(f"{path}: last node has chi_out={previous}, expected 1")
    if reader.take(4, "caps marker") != b"CAPS":
        raise FileFormatError(f"{path}: missing caps section")
    caps = []
    for idx in range(steps + 1):
        length = reader.u32(f"cap {idx} length")
        caps.append(jnp.asarray(reader.array(C128, (length,), f"cap {idx}")))
    if reader.take(4, "metadata marker") != b"META":
        raise FileFormatError(f"{path}: missing metadata section")
    metadata = jsonpickle.decode(reader.take(reader.u32("metadata length"), "metadata").decode())
    if reader.offset != len(data):
        raise FileFormatError(f"{path}: {len(data) - reader.offset} trailing bytes")
    try:
        return ProcessTensor(nodes, dt, system_dim, caps, metadata)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}")


def write(path: str, data: typing.Union[bytes, str]):
    mode = "wb" if isinstance(data, bytes) else "w"
    directory = os.path.dirname(path)
    if directory and "://" not in path:
        os.makedirs(directory, exist_ok=True)
    for _ in range(3):
        try:
            with open(path, mode) as f:
                f.write(data)
            return
        except OSError:
            print(f"write to {path} failed, trying again", flush=True)

    print("write failed 3 times, exiting", flush=True)
    raise OSError(f"write to {path} failed")


def save(pt: ProcessTensor, path: str):
    write(path, encode(pt))


def load(path: str) -> ProcessTensor:
    with open(path, "rb") as f:
        data = f.read()
    return decode(data, path)


def format_value(value: typing.Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: str, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[typing.Any]]):
    cells = np.asarray([[format_value(itm) for itm in row] for row in rows], dtype=str).reshape(-1, len(header))
    buffer = io.StringIO()
    np.savetxt(buffer, cells, fmt="%s", delimiter=",", header=",".join(header), comments="")
    write(path, buffer.getvalue())

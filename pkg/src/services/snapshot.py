"""二进制快照：定长小端头 + float64 负载

头部布局（小端）：
    magic "WWPS" | version u16 | kind u8 | flags u8 | rows u32 | cols u32
    descriptors 6×f64 | time f64 | digest 32 字节 | payload_len u64
负载按行主序存放，复数按 (re, im) 交错。
"""
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..core.classical import FockBasis, WeylMatrix
from ..core.errors import SnapshotError
from ..core.gaussian import CovarianceMatrix, Frame
from ..core.logger import logger
from ..core.quantum import WignerField
from ..core.scales import PhaseSpaceGrid, WavefunctionState

MAGIC = b"WWPS"
VERSION = 1

HEADER_DTYPE = np.dtype([
    ("magic", "S4"),
    ("version", "<u2"),
    ("kind", "u1"),
    ("flags", "u1"),
    ("rows", "<u4"),
    ("cols", "<u4"),
    ("descriptors", "<f8", (6,)),
    ("time", "<f8"),
    ("digest", "S32"),
    ("payload_len", "<u8"),
])
HEADER_SIZE = HEADER_DTYPE.itemsize

FLAG_CLASSICAL = 0x01
FLAG_DIMENSIONLESS = 0x02
FLAG_COM = 0x04


class SnapshotKind(IntEnum):
    WAVEFUNCTION = 0
    WIGNER = 1
    WEYL = 2
    COVARIANCE = 3


COMPLEX_KINDS = {SnapshotKind.WAVEFUNCTION, SnapshotKind.WEYL}

Snapshotable = Union[WavefunctionState, WignerField, WeylMatrix, CovarianceMatrix]


@dataclass(frozen=True)
class SnapshotHeader:
    version: int
    kind: SnapshotKind
    flags: int
    rows: int
    cols: int
    descriptors: tuple
    time: float
    digest: str
    payload_len: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "kind": self.kind.name.lower(),
            "flags": self.flags,
            "rows": self.rows,
            "cols": self.cols,
            "descriptors": list(self.descriptors),
            "time": self.time,
            "digest": self.digest,
            "payload_len": self.payload_len,
        }


def _digest_bytes(digest: Optional[str]) -> bytes:
    if not digest:
        return b"\x00" * 32
    try:
        raw = bytes.fromhex(digest)
    except ValueError as e:
        raise SnapshotError(f"摘要不是十六进制串: {digest}") from e
    if len(raw) != 32:
        raise SnapshotError(f"摘要长度必须是 32 字节: {len(raw)}")
    return raw


def _describe(obj: Snapshotable):
    """返回 (kind, flags, 描述量, 时间, 负载矩阵)"""
    if isinstance(obj, WavefunctionState):
        g = obj.grid
        return (SnapshotKind.WAVEFUNCTION, 0, (g.r_min, g.r_max, g.p_min, g.p_max, obj.hbar, float(g.n_p)),
                obj.t, obj.psi.reshape(-1, 1))
    if isinstance(obj, WignerField):
        g = obj.grid
        flags = (FLAG_CLASSICAL if obj.origin == "classical" else 0) \
            | (FLAG_DIMENSIONLESS if obj.units == "dimensionless" else 0)
        return (SnapshotKind.WIGNER, flags, (g.r_min, g.r_max, g.p_min, g.p_max, obj.hbar, 0.0),
                obj.t, obj.values)
    if isinstance(obj, WeylMatrix):
        b = obj.basis
        return (SnapshotKind.WEYL, 0, (b.ell, b.r0, b.p0, b.mu, b.hbar, 0.0), obj.t, obj.rho)
    if isinstance(obj, CovarianceMatrix):
        flags = FLAG_COM if obj.frame is Frame.COM else 0
        return (SnapshotKind.COVARIANCE, flags, (0.0,) * 6, obj.t, obj.sigma)
    raise SnapshotError(f"不支持的快照对象类型: {type(obj).__name__}")


def _payload(kind: SnapshotKind, matrix: np.ndarray) -> bytes:
    if kind in COMPLEX_KINDS:
        data = np.ascontiguousarray(matrix, dtype="<c16").view("<f8")
    else:
        data = np.ascontiguousarray(matrix, dtype="<f8")
    return data.tobytes(order="C")


def save_snapshot(obj: Snapshotable, path: Union[str, Path], digest: Optional[str] = None) -> Path:
    """写快照文件"""
    kind, flags, descriptors, time, matrix = _describe(obj)
    payload = _payload(kind, matrix)
    header = np.zeros((), dtype=HEADER_DTYPE)
    header["magic"] = MAGIC
    header["version"] = VERSION
    header["kind"] = int(kind)
    header["flags"] = flags
    header["rows"], header["cols"] = matrix.shape
    header["descriptors"] = descriptors
    header["time"] = time
    header["digest"] = _digest_bytes(digest)
    header["payload_len"] = len(payload)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(payload)
    logger.debug(f"保存快照: {path} ({kind.name.lower()}, {matrix.shape})")
    return path


def _parse_header(raw: bytes) -> SnapshotHeader:
    if len(raw) < HEADER_SIZE:
        raise SnapshotError(f"快照文件过短: {len(raw)} 字节，头部需要 {HEADER_SIZE}")
    h = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
    if bytes(h["magic"]) != MAGIC:
        raise SnapshotError(f"快照魔数不匹配: {bytes(h['magic'])!r}")
    version = int(h["version"])
    if version != VERSION:
        raise SnapshotError(f"不支持的快照版本 {version}，当前版本为 {VERSION}")
    try:
        kind = SnapshotKind(int(h["kind"]))
    except ValueError as e:
        raise SnapshotError(f"未知的快照类型: {int(h['kind'])}") from e
    digest = bytes(h["digest"]).ljust(32, b"\x00")
    return SnapshotHeader(
        version=version, kind=kind, flags=int(h["flags"]), rows=int(h["rows"]), cols=int(h["cols"]),
        descriptors=tuple(float(v) for v in h["descriptors"]), time=float(h["time"]),
        digest=digest.hex(), payload_len=int(h["payload_len"]),
    )


def read_header(path: Union[str, Path]) -> SnapshotHeader:
    with open(path, "rb") as f:
        return _parse_header(f.read(HEADER_SIZE))


def load_snapshot(path: Union[str, Path], expected_digest: Optional[str] = None) -> Snapshotable:
    """读快照文件；头部或长度不符时抛出 SnapshotError，不返回部分对象"""
    raw = Path(path).read_bytes()
    header = _parse_header(raw)
    width = 2 if header.kind in COMPLEX_KINDS else 1
    expected_len = header.rows * header.cols * width * 8
    if header.payload_len != expected_len:
        raise SnapshotError(f"负载长度 {header.payload_len} 与维度 {header.rows}×{header.cols} 不符")
    if len(raw) - HEADER_SIZE != expected_len:
        raise SnapshotError(f"快照文件被截断: 负载 {len(raw) - HEADER_SIZE} 字节，应为 {expected_len}")
    if expected_digest is not None and header.digest != expected_digest:
        logger.warning(f"快照摘要与当前配置不符: {path}")

    data = np.frombuffer(raw, dtype="<f8", offset=HEADER_SIZE).copy()
    if width == 2:
        data = data.view("<c16")
    matrix = data.reshape(header.rows, header.cols)
    d = header.descriptors

    if header.kind is SnapshotKind.WAVEFUNCTION:
        grid = PhaseSpaceGrid(r_min=d[0], r_max=d[1], p_min=d[2], p_max=d[3], n_r=header.rows, n_p=int(d[5]))
        return WavefunctionState(psi=matrix[:, 0], grid=grid, t=header.time, hbar=d[4])
    if header.kind is SnapshotKind.WIGNER:
        grid = PhaseSpaceGrid(r_min=d[0], r_max=d[1], p_min=d[2], p_max=d[3],
                              n_r=header.rows, n_p=header.cols)
        return WignerField(
            values=matrix, grid=grid, t=header.time,
            origin="classical" if header.flags & FLAG_CLASSICAL else "quantum",
            hbar=d[4], units="dimensionless" if header.flags & FLAG_DIMENSIONLESS else "si",
        )
    if header.kind is SnapshotKind.WEYL:
        basis = FockBasis(dim=header.rows, ell=d[0], mu=d[3], hbar=d[4], r0=d[1], p0=d[2])
        return WeylMatrix(rho=matrix, t=header.time, basis=basis)
    frame = Frame.COM if header.flags & FLAG_COM else Frame.LAB
    return CovarianceMatrix(sigma=matrix, frame=frame, t=header.time)

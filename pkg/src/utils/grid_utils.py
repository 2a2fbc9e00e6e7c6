import hashlib
import json
from typing import Any, List, Optional, Tuple

import numpy as np

# 3×3 邻域上的双二次拟合设计矩阵: 1, x, y, x², xy, y²
_OFFSETS = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=float)
_DESIGN = np.column_stack([
    np.ones(9), _OFFSETS[:, 0], _OFFSETS[:, 1],
    _OFFSETS[:, 0] ** 2, _OFFSETS[:, 0] * _OFFSETS[:, 1], _OFFSETS[:, 1] ** 2,
])


def row_chunks(n_rows: int, workers: int, min_rows: int = 16) -> List[slice]:
    """把 n_rows 行切成固定顺序的块，块数不超过 4×workers"""
    n_chunks = max(1, min(4 * max(1, workers), n_rows // min_rows or 1))
    bounds = np.linspace(0, n_rows, n_chunks + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def fixed_chunks(total: int, chunk_size: int) -> List[Tuple[int, int]]:
    """与工作线程数无关的定长分块，返回 (起点, 长度)"""
    if chunk_size <= 0:
        raise ValueError(f"块大小必须为正: {chunk_size}")
    return [(start, min(chunk_size, total - start)) for start in range(0, total, chunk_size)]


def biquadratic_minimum(patch: np.ndarray) -> Optional[Tuple[float, float, float]]:
    """对 3×3 邻域做最小二乘双二次拟合

    返回 (dx, dy, value)，偏移以格点为单位；驻点不是极小或落在邻域外时返回 None。
    """
    coeffs, *_ = np.linalg.lstsq(_DESIGN, np.asarray(patch, dtype=float).ravel(), rcond=None)
    c0, c1, c2, c3, c4, c5 = coeffs
    hessian = np.array([[2.0 * c3, c4], [c4, 2.0 * c5]])
    if np.linalg.det(hessian) <= 0 or hessian[0, 0] <= 0:
        return None
    dx, dy = np.linalg.solve(hessian, -np.array([c1, c2]))
    if abs(dx) > 1.0 or abs(dy) > 1.0:
        return None
    value = c0 + c1 * dx + c2 * dy + c3 * dx ** 2 + c4 * dx * dy + c5 * dy ** 2
    return float(dx), float(dy), float(value)


def digest_of(payload: Any) -> str:
    """对可 JSON 序列化对象计算 sha256（键排序）"""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_sha256(path: str) -> str:
    """计算文件哈希"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()

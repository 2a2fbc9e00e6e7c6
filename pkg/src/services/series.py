"""时间序列 CSV 与运行元数据的写出"""
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd
import scipy
import yaml

from ..core.logger import logger

# 列名 → 单位
COLUMN_UNITS: Dict[str, str] = {
    "t": "s",
    "omega_t": "1",
    "wigner_min": "1 (ħ·W)",
    "field_min": "1 (ħ·f)",
    "r_loc": "m",
    "p_loc": "kg·m/s",
    "r_offset": "m",
    "p_offset": "kg·m/s",
    "mean_r": "m",
    "mean_p": "kg·m/s",
    "var_r": "m²",
    "var_p": "(kg·m/s)²",
    "cov_rp": "kg·m²/s",
    "mu3_p": "(kg·m/s)³",
    "second_r": "m²",
    "skew_p": "1",
    "norm": "1",
    "purity": "1",
    "energy": "J",
    "C": "J",
    "dC_dt": "W",
    "ehrenfest": "W",
    "linf": "1/(J·s)",
    "field_max": "1/(J·s)",
    "linf_rel": "1",
    "lambda_min": "1",
    "lambda_min_12": "1",
    "lambda_short": "1",
    "lambda_phase": "rad",
    "projector": "1",
    "leakage": "1",
    "epsilon": "1",
    "w_tail_pert": "1 (ħ·W)",
    "witness": "1 (dimensionless 𝒩)",
    "delta": "1",
    "r0": "1",
    "p0": "1",
    "estimate": "1",
    "standard_error": "1",
    "direct": "1",
    "c_gamma": "1",
    "variance": "1",
    "variance_model": "1",
    "samples_required": "1",
    "phi": "rad",
    "x": "1",
    "x1_y2sq": "m³",
    "x2_y1sq": "m³",
    "dx_y1y2": "m³",
    "energy_drift": "1",
}


def column_units(columns) -> Dict[str, str]:
    """未登记的列（如 E_0_1）按前缀推断单位"""
    units = {}
    for col in columns:
        if col in COLUMN_UNITS:
            units[col] = COLUMN_UNITS[col]
        elif col.startswith("E_"):
            units[col] = "ebit"
        elif col.endswith("_se"):
            units[col] = COLUMN_UNITS.get(col[:-3], "")
        else:
            units[col] = ""
    return units


def write_series(frame: pd.DataFrame, path: Union[str, Path], meta: Optional[Mapping[str, Any]] = None) -> Path:
    """写 CSV，头部为以 # 开头的元数据行；不含时间戳，相同输入得到相同字节"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in (meta or {}).items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, lineterminator="\n", float_format="%.17g")
    logger.info(f"写出时间序列: {path} ({len(frame)} 行)")
    return path


def read_series(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def library_versions() -> Dict[str, str]:
    return {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}


def write_metadata(path: Union[str, Path], columns, digest: str, extra: Optional[Mapping[str, Any]] = None) -> Path:
    """metadata.yaml：列名与单位、配置摘要、库版本"""
    data = {
        "config_digest": digest,
        "columns": column_units(columns),
        "libraries": library_versions(),
    }
    if extra:
        data.update(extra)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, allow_unicode=True, sort_keys=False)
    return path


def write_yaml(path: Union[str, Path], data: Mapping[str, Any]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(dict(data), f, allow_unicode=True, sort_keys=False)
    return path

"""运行配置：从 YAML/JSON 文件加载并校验"""
from typing import List, Literal, Optional, Tuple
import math

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.config import load_config_file
from ..core.errors import ConfigError
from ..core.logger import logger
from ..core.moments import EnsembleConfig
from ..core.potential import PotentialKind, PotentialSpec
from ..core.scales import PhaseSpaceGrid, PhysicalParams, auto_grid
from ..core.witness import WitnessConfig
from ..utils.grid_utils import digest_of

Experiment = Literal[
    "evolve-quantum", "evolve-classical", "equivalence", "gaussian",
    "witness-wigner", "witness-weyl", "sample", "moments", "ensemble-2d",
]


class GridConfig(BaseModel):
    """波函数网格与相空间场网格

    未给出边界时按二次动力学包络自动确定；场网格的位置采样取波函数网格的每 stride 个点。
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    r_min: Optional[float] = None
    r_max: Optional[float] = None
    p_min: Optional[float] = None
    p_max: Optional[float] = None
    n_r: int = 2048
    n_p: int = 512
    stride: int = 4
    spread: float = 8.0
    p_spread: float = 16.0

    @model_validator(mode="after")
    def _bounds(self):
        given = [v is not None for v in (self.r_min, self.r_max, self.p_min, self.p_max)]
        if any(given) and not all(given):
            raise ValueError("网格边界必须全部给出或全部省略")
        if self.stride < 1 or self.n_r % self.stride:
            raise ValueError(f"stride={self.stride} 必须整除 n_r={self.n_r}")
        if self.spread <= 0 or self.p_spread <= 0:
            raise ValueError(f"包络倍数必须为正: spread={self.spread}, p_spread={self.p_spread}")
        return self

    def resolve(self, params: PhysicalParams, t_final: float) -> Tuple[PhaseSpaceGrid, PhaseSpaceGrid]:
        """返回 (波函数网格, 场网格)"""
        if self.r_min is None:
            state_grid = auto_grid(params, t_final, n_r=self.n_r, n_p=self.n_p,
                                   spread=self.spread, p_spread=self.p_spread)
        else:
            state_grid = PhaseSpaceGrid(r_min=self.r_min, r_max=self.r_max, p_min=self.p_min,
                                        p_max=self.p_max, n_r=self.n_r, n_p=self.n_p)
        field_grid = PhaseSpaceGrid(
            r_min=state_grid.r_min, r_max=state_grid.r_max,
            p_min=state_grid.p_min, p_max=state_grid.p_max,
            n_r=self.n_r // self.stride, n_p=self.n_p,
        )
        return state_grid, field_grid


class RunConfig(BaseModel):
    """一次运行的完整配置"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    experiment: Experiment
    params: PhysicalParams
    potential: PotentialKind = PotentialKind.TRUNCATED
    grid: GridConfig = Field(default_factory=GridConfig)
    times: List[float] = Field(default_factory=list, validate_default=True)
    dt: Optional[float] = None
    witness: Optional[WitnessConfig] = None
    ensemble: Optional[EnsembleConfig] = None
    seed: int = 0
    output: str = "./runs/latest"
    snapshots: bool = False

    # 实验专用参数
    fock_dim: int = 24
    fock_pairs: List[Tuple[int, int]] = Field(default_factory=lambda: [(0, 0), (0, 1), (1, 1), (2, 2), (3, 3)])
    samples: int = 1_000_000
    # 省略时按态的压缩比选取
    n_phi: Optional[int] = None
    optimize_center: bool = True
    moments_source: Literal["quantum", "classical"] = "quantum"

    @field_validator("times")
    @classmethod
    def _times(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("检查点列表为空")
        if any(not math.isfinite(t) or t < 0 for t in value):
            raise ValueError(f"检查点必须是非负有限数: {value}")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f"检查点必须严格递增: {value}")
        return value

    @field_validator("fock_dim")
    @classmethod
    def _fock_dim(cls, value: int) -> int:
        if value < 3:
            raise ValueError(f"Fock 基维数至少为 3: {value}")
        return value

    @field_validator("samples")
    @classmethod
    def _samples(cls, value: int) -> int:
        if value < 100:
            raise ValueError(f"样本数至少为 100: {value}")
        return value

    @field_validator("n_phi")
    @classmethod
    def _n_phi(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 2:
            raise ValueError(f"角度表数至少为 2: {value}")
        return value

    @model_validator(mode="after")
    def _sections(self):
        if self.experiment == "sample" and self.witness is None:
            raise ValueError("sample 实验需要 witness 配置段")
        if self.experiment == "ensemble-2d" and self.ensemble is None:
            raise ValueError("ensemble-2d 实验需要 ensemble 配置段")
        if self.experiment == "equivalence" and not self.potential_spec().is_quadratic:
            raise ValueError(f"equivalence 实验要求势能至多二次: N={self.params.N}, theta={self.params.theta}")
        return self

    def potential_spec(self) -> PotentialSpec:
        return PotentialSpec.from_params(self.params, self.potential.value)

    @property
    def t_final(self) -> float:
        return self.times[-1]

    def digest(self) -> str:
        """配置摘要，写入快照与台账（不含输出目录）"""
        payload = self.model_dump(mode="json", exclude={"output"})
        return digest_of(payload)


def load_run_config(path: str, **overrides) -> RunConfig:
    """读取配置文件并应用命令行覆盖；任何校验失败都转换为 ConfigError"""
    try:
        data = load_config_file(path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"无法读取配置文件: {e}") from e
    except Exception as e:
        raise ConfigError(f"配置文件解析失败: {e}") from e

    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    # 命令行 --seed 同时作用于系综配置段
    if overrides.get("seed") is not None and isinstance(data.get("ensemble"), dict):
        data["ensemble"]["seed"] = overrides["seed"]
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"配置校验失败:\n{e}") from e
    logger.info(f"加载运行配置: {path} ({config.experiment})")
    return config

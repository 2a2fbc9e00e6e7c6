"""基于矩的三阶见证：𝒞 量及其 Ehrenfest 关系，二维经典轨道系综的跨轴关联"""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple
import math

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, field_validator
from tqdm import tqdm

from .config import settings
from .errors import NumericalAbort
from .logger import logger
from .potential import grad_multipole_2d, v_multipole_2d
from .quantum import MomentSet
from .scales import PhysicalParams
from ..utils.grid_utils import fixed_chunks

MIN_TRAJECTORIES = 1000
# 初始宽度相对间距的上限
MAX_WIDTH_OVER_L = 0.2
# 两质点间距低于此值（以 L 计）视为碰撞
COLLISION_FRACTION = 0.1
# 自动步长 ω·dt
OMEGA_STEP = 1e-3
TRAJECTORY_CHUNK = 10_000
CORRELATORS = ("x1_y2sq", "x2_y1sq", "dx_y1y2")


def c_witness(trajectory: Sequence[MomentSet], params: PhysicalParams) -> np.ndarray:
    """𝒞(t) = ⟨p⟩²/m − ¼mω²(⟨r⟩ − L/2)²"""
    m, omega, L = params.m, params.omega, params.L
    return np.array([
        mom.mean_p ** 2 / m - 0.25 * m * omega ** 2 * (mom.mean_r - 0.5 * L) ** 2
        for mom in trajectory
    ])


def ehrenfest_rate(moment: MomentSet, params: PhysicalParams) -> float:
    """d𝒞/dt = −θ(3ω²/2L)⟨r²⟩⟨p⟩"""
    return -params.theta * 1.5 * params.omega ** 2 / params.L * moment.second_r * moment.mean_p


class EnsembleConfig(BaseModel):
    """二维高斯初态系综；宽度与动量顺序为 (粒子1 x, 粒子1 y, 粒子2 x, 粒子2 y)"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_traj: int = 100_000
    seed: int = 0
    order: int = 3
    widths: Tuple[float, float, float, float]
    momenta: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    t_final: float
    dt: Optional[float] = None
    bootstrap: int = 200

    @field_validator("n_traj")
    @classmethod
    def _enough(cls, value: int) -> int:
        if value < MIN_TRAJECTORIES:
            raise ValueError(f"轨道数至少为 {MIN_TRAJECTORIES}: {value}")
        return value

    @field_validator("order")
    @classmethod
    def _order(cls, value: int) -> int:
        if value not in (2, 3):
            raise ValueError(f"多极阶数只能是 2 或 3: {value}")
        return value

    @field_validator("widths")
    @classmethod
    def _widths(cls, value):
        if any(not math.isfinite(w) or w <= 0 for w in value):
            raise ValueError(f"初始宽度必须为正: {value}")
        return value

    @field_validator("t_final")
    @classmethod
    def _duration(cls, value: float) -> float:
        if not math.isfinite(value) or value <= 0:
            raise ValueError(f"演化时间必须为正: {value}")
        return value

    @field_validator("dt")
    @classmethod
    def _step(cls, value):
        if value is not None and (not math.isfinite(value) or value <= 0):
            raise ValueError(f"步长必须为正: {value}")
        return value

    @field_validator("bootstrap")
    @classmethod
    def _bootstrap(cls, value: int) -> int:
        if value < 10:
            raise ValueError(f"bootstrap 次数至少为 10: {value}")
        return value

    def n_steps(self, params: PhysicalParams) -> int:
        if self.dt is not None:
            return max(1, int(math.ceil(self.t_final / self.dt)))
        return max(200, int(math.ceil(params.omega * self.t_final / OMEGA_STEP)))


def swap_labels(cfg: EnsembleConfig) -> EnsembleConfig:
    """交换粒子标号；为保持粒子1在左侧，x 方向同时镜像"""
    sx1, sy1, sx2, sy2 = cfg.widths
    p1x, p1y, p2x, p2y = cfg.momenta
    return cfg.model_copy(update={
        "widths": (sx2, sy2, sx1, sy1),
        "momenta": (-p2x, p2y, -p1x, p1y),
    })


@dataclass
class CorrelationReport:
    """连通三阶关联及其 bootstrap 标准误"""
    order: int
    n_traj: int
    t_final: float
    values: Dict[str, float]
    errors: Dict[str, float]
    energy_drift: float
    seed: int = 0

    def significance(self, name: str) -> float:
        err = self.errors[name]
        return abs(self.values[name]) / err if err > 0 else math.inf

    def to_text(self) -> str:
        lines = [
            f"order = {self.order}",
            f"n_traj = {self.n_traj}",
            f"seed = {self.seed}",
            f"t_final = {self.t_final!r}",
        ]
        for name in CORRELATORS:
            lines.append(f"{name} = {self.values[name]!r}")
            lines.append(f"{name}_se = {self.errors[name]!r}")
        lines.append(f"energy_drift = {self.energy_drift!r}")
        return "\n".join(lines) + "\n"


def _energy(r1, r2, v1, v2, params: PhysicalParams, order: int) -> np.ndarray:
    kinetic = 0.5 * params.m * (np.sum(v1 ** 2, axis=-1) + np.sum(v2 ** 2, axis=-1))
    return kinetic + v_multipole_2d(r1, r2, order, params, full=True)


def _check_collision(r1, r2, params: PhysicalParams) -> None:
    d = np.hypot(params.L + r2[:, 0] - r1[:, 0], r2[:, 1] - r1[:, 1])
    closest = float(d.min())
    if closest <= COLLISION_FRACTION * params.L:
        raise NumericalAbort(f"轨道发生碰撞: 最小间距 {closest:.3e} ≤ {COLLISION_FRACTION}·L")


def verlet_2d(r1: np.ndarray, r2: np.ndarray, v1: np.ndarray, v2: np.ndarray,
              params: PhysicalParams, order: int, duration: float, n_steps: int):
    """两质点平面运动的速度 Verlet，返回末态和最大相对能量漂移"""
    m = params.m
    h = duration / n_steps
    scale = 0.25 * params.m * params.omega ** 2 * params.L ** 2
    e0 = _energy(r1, r2, v1, v2, params, order)
    drift = 0.0
    g1, g2 = grad_multipole_2d(r1, r2, order, params)
    for _ in range(n_steps):
        v1 = v1 - 0.5 * h * g1 / m
        v2 = v2 - 0.5 * h * g2 / m
        r1 = r1 + h * v1
        r2 = r2 + h * v2
        _check_collision(r1, r2, params)
        g1, g2 = grad_multipole_2d(r1, r2, order, params)
        v1 = v1 - 0.5 * h * g1 / m
        v2 = v2 - 0.5 * h * g2 / m
        e = _energy(r1, r2, v1, v2, params, order)
        drift = max(drift, float(np.max(np.abs(e - e0))) / scale)
    return r1, r2, v1, v2, drift


def _run_chunk(cfg: EnsembleConfig, params: PhysicalParams, child: np.random.SeedSequence,
               count: int, n_steps: int):
    rng = np.random.Generator(np.random.Philox(child))
    widths = np.asarray(cfg.widths)
    pos = rng.standard_normal((count, 4)) * widths
    r1, r2 = pos[:, 0:2], pos[:, 2:4]
    mom = np.asarray(cfg.momenta) / params.m
    v1 = np.broadcast_to(mom[0:2], (count, 2)).copy()
    v2 = np.broadcast_to(mom[2:4], (count, 2)).copy()
    r1, r2, _, _, drift = verlet_2d(r1, r2, v1, v2, params, cfg.order, cfg.t_final, n_steps)
    return np.hstack([r1, r2]), drift


def _connected(samples: np.ndarray) -> np.ndarray:
    """三个连通关联，samples 列为 (x1, y1, x2, y2)"""
    c = samples - samples.mean(axis=0)
    x1, y1, x2, y2 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    return np.array([
        np.mean(x1 * y2 ** 2),
        np.mean(x2 * y1 ** 2),
        np.mean((x2 - x1) * y1 * y2),
    ])


def _bootstrap(samples: np.ndarray, n_boot: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n_boot])))
    n = samples.shape[0]
    stats = np.empty((n_boot, len(CORRELATORS)))
    for b in tqdm(range(n_boot), desc="bootstrap", disable=not settings.progress, leave=False):
        stats[b] = _connected(samples[rng.integers(0, n, n)])
    return stats.std(axis=0, ddof=1)


def ensemble_2d(cfg: EnsembleConfig, params: PhysicalParams) -> CorrelationReport:
    """在多极展开势下积分二维轨道系综，估计 ⟨x₁y₂²⟩_c、⟨x₂y₁²⟩_c、⟨(x₂−x₁)y₁y₂⟩_c"""
    if max(cfg.widths) > MAX_WIDTH_OVER_L * params.L:
        raise ValueError(f"初始宽度 {max(cfg.widths):.3e} 相对间距 L={params.L:.3e} 过大")
    n_steps = cfg.n_steps(params)
    chunks = fixed_chunks(cfg.n_traj, TRAJECTORY_CHUNK)
    children = np.random.SeedSequence(cfg.seed).spawn(len(chunks))
    logger.info(f"二维系综: {cfg.n_traj} 条轨道, 阶数 {cfg.order}, {n_steps} 步")

    results = Parallel(n_jobs=settings.max_workers, prefer="threads")(
        delayed(_run_chunk)(cfg, params, child, length, n_steps)
        for child, (_, length) in zip(children, chunks)
    )
    samples = np.vstack([res[0] for res in results])
    drift = max(res[1] for res in results)

    values = _connected(samples)
    errors = _bootstrap(samples, cfg.bootstrap, cfg.seed)
    report = CorrelationReport(
        order=cfg.order, n_traj=cfg.n_traj, t_final=cfg.t_final,
        values={name: float(v) for name, v in zip(CORRELATORS, values)},
        errors={name: float(e) for name, e in zip(CORRELATORS, errors)},
        energy_drift=drift, seed=cfg.seed,
    )
    logger.info(f"二维系综完成: ⟨x₁y₂²⟩_c 显著性 {report.significance('x1_y2sq'):.1f}σ, 能量漂移 {drift:.2e}")
    return report

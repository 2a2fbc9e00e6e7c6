"""高斯部分：参考系变换、辛传播、Fock 初态协方差与对数负性"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence, Tuple
import math

import numpy as np


from .logger import logger
from .scales import PhysicalParams

SYMMETRY_TOLERANCE = 1e-12

# X = M·R，X = (x₁, p₁, x₂, p₂)，R = (R, P, r, p)，r = x₂ − x₁，p = (p₂ − p₁)/2
FRAME_MATRIX = np.array([
    [1.0, 0.0, -0.5, 0.0],
    [0.0, 0.5, 0.0, -1.0],
    [1.0, 0.0, 0.5, 0.0],
    [0.0, 0.5, 0.0, 1.0],
])
FRAME_MATRIX_INV = np.linalg.inv(FRAME_MATRIX)

OMEGA = np.array([
    [0.0, 1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0, 0.0],
])


class Frame(str, Enum):
    LAB = "LAB"
    COM = "COM"


@dataclass(frozen=True)
class CovarianceMatrix:
    """4×4 二阶矩矩阵"""
    sigma: np.ndarray
    frame: Frame = Frame.LAB
    t: float = 0.0

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (4, 4):
            raise ValueError(f"协方差矩阵必须是 4×4: {sigma.shape}")
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def alpha(self) -> np.ndarray:
        return self.sigma[0:2, 0:2]

    @property
    def beta(self) -> np.ndarray:
        return self.sigma[2:4, 2:4]

    @property
    def gamma(self) -> np.ndarray:
        return self.sigma[0:2, 2:4]

    def is_symmetric(self, tol: float = SYMMETRY_TOLERANCE) -> bool:
        scale = max(float(np.max(np.abs(self.sigma))), 1e-300)
        return bool(np.max(np.abs(self.sigma - self.sigma.T)) <= tol * scale)

    def is_physical(self, hbar: float) -> bool:
        """σ + iħΩ/2 ≥ 0（经典模型可能违反，只作标记）"""
        scaled, _ = _normalized(self.sigma, hbar)
        eig = np.linalg.eigvalsh(scaled + 0.5j * OMEGA)
        return bool(eig[0] >= -1e-10)


def frame_transform(cov: CovarianceMatrix) -> CovarianceMatrix:
    """LAB ↔ COM"""
    if cov.frame is Frame.LAB:
        sigma = FRAME_MATRIX_INV @ cov.sigma @ FRAME_MATRIX_INV.T
        return replace(cov, sigma=sigma, frame=Frame.COM)
    sigma = FRAME_MATRIX @ cov.sigma @ FRAME_MATRIX.T
    return replace(cov, sigma=sigma, frame=Frame.LAB)


def initial_covariance(n1: int, n2: int, params: PhysicalParams) -> CovarianceMatrix:
    """Fock 态 |n₁⟩⊗|n₂⟩ 的 LAB 协方差"""
    if n1 < 0 or n2 < 0:
        raise ValueError(f"Fock 指标不能为负: ({n1}, {n2})")
    s2 = params.sigma ** 2
    p2 = params.hbar ** 2 / (4.0 * s2)
    diag = [(2 * n1 + 1) * s2, (2 * n1 + 1) * p2, (2 * n2 + 1) * s2, (2 * n2 + 1) * p2]
    return CovarianceMatrix(sigma=np.diag(diag), frame=Frame.LAB, t=0.0)


def drift_matrix(params: PhysicalParams) -> np.ndarray:
    """COM 系 Ehrenfest 方程的漂移矩阵（常数项和线性项不进入协方差）"""
    m = params.m
    A = np.zeros((4, 4))
    A[0, 1] = 1.0 / (2.0 * m)
    A[2, 3] = 2.0 / m
    A[3, 2] = 0.5 * m * params.omega ** 2
    return A


def symplectic_propagator(t: float, params: PhysicalParams) -> np.ndarray:
    """S(t) = exp(A t) 的闭式"""
    m, omega = params.m, params.omega
    ch = math.cosh(omega * t)
    sh = math.sinh(omega * t)
    S = np.zeros((4, 4))
    S[0, 0] = S[1, 1] = 1.0
    S[0, 1] = t / (2.0 * m)
    S[2, 2] = S[3, 3] = ch
    S[2, 3] = 2.0 / (m * omega) * sh
    S[3, 2] = 0.5 * m * omega * sh
    return S


def evolve_covariance(cov0: CovarianceMatrix, t: float, params: PhysicalParams) -> CovarianceMatrix:
    """ς(t) = S(t) ς(0) S(t)ᵀ，输入必须是 COM 系"""
    if cov0.frame is not Frame.COM:
        raise ValueError("evolve_covariance 需要 COM 系协方差")
    S = symplectic_propagator(t - cov0.t, params)
    sigma = S @ cov0.sigma @ S.T
    return CovarianceMatrix(sigma=0.5 * (sigma + sigma.T), frame=Frame.COM, t=t)


def _normalized(sigma: np.ndarray, hbar: float) -> Tuple[np.ndarray, np.ndarray]:
    """局部辛缩放到 ħ=1、各模 x、p 方差同量级的单位"""
    scales = []
    for mode in (0, 2):
        sx, sp = sigma[mode, mode], sigma[mode + 1, mode + 1]
        a = (sx / sp) ** 0.25 if sx > 0 and sp > 0 else 1.0
        scales.extend([1.0 / a, a])
    D = np.diag(scales) / math.sqrt(hbar)
    return D @ sigma @ D, D


def symplectic_eigenvalues(cov: CovarianceMatrix, hbar: float) -> np.ndarray:
    """Williamson 辛本征值（SI 单位，升序）"""
    scaled, _ = _normalized(cov.sigma, hbar)
    nu = np.sort(np.abs(np.linalg.eigvals(1j * OMEGA @ scaled)))
    return nu[::2] * hbar


def partial_transpose(cov: CovarianceMatrix) -> CovarianceMatrix:
    """显式部分转置：第二个模的动量反号"""
    if cov.frame is not Frame.LAB:
        raise ValueError("部分转置需要 LAB 系协方差")
    P = np.diag([1.0, 1.0, 1.0, -1.0])
    return replace(cov, sigma=P @ cov.sigma @ P)


def pt_invariants(cov: CovarianceMatrix) -> Tuple[float, float]:
    """(Σ̃, det σ)，Σ̃ = det α + det β − 2 det γ"""
    sigma_t = np.linalg.det(cov.alpha) + np.linalg.det(cov.beta) - 2.0 * np.linalg.det(cov.gamma)
    return float(sigma_t), float(np.linalg.det(cov.sigma))


def pt_symplectic_formula(cov: CovarianceMatrix) -> Tuple[float, float]:
    """闭式 ν̃± = √((Σ̃ ± √(Σ̃² − 4 det σ))/2)"""
    sigma_t, det = pt_invariants(cov)
    disc = math.sqrt(max(sigma_t ** 2 - 4.0 * det, 0.0))
    nu_plus = math.sqrt(0.5 * (sigma_t + disc))
    nu_minus = math.sqrt(max(0.5 * (sigma_t - disc), 0.0))
    return nu_plus, nu_minus


def pt_symplectic_eigenvalues(cov: CovarianceMatrix, hbar: float) -> Tuple[float, float]:
    """部分转置后的辛本征值 (ν̃₊, ν̃₋)

    近乘积态时 Σ̃² − 4det σ 严重相消，这里改用缩放单位下 iΩσ̃ 的谱。
    """
    nu = symplectic_eigenvalues(partial_transpose(cov), hbar)
    return float(nu[1]), float(nu[0])


def log_negativity(cov: CovarianceMatrix, hbar: float) -> float:
    """E = max[0, −log₂(2ν̃₋/ħ)]"""
    if cov.frame is not Frame.LAB:
        raise ValueError("对数负性需要 LAB 系协方差")
    if not cov.is_symmetric():
        raise ValueError("协方差矩阵不对称")
    _, nu_minus = pt_symplectic_eigenvalues(cov, hbar)
    return max(0.0, -math.log2(2.0 * nu_minus / hbar))


def short_time_E0n(n: int, t: float, params: PhysicalParams) -> float:
    """E^{(0,n)}(t) ≈ (2n+1)/(8n(n+1) ln2) · ω⁴t²/(ħ/2mσ²)²"""
    if n < 1:
        raise ValueError(f"短时公式要求 n ≥ 1: n={n}")
    rate = params.hbar / (2.0 * params.m * params.sigma ** 2)
    return (2 * n + 1) / (8.0 * n * (n + 1) * math.log(2.0)) * params.omega ** 4 * t ** 2 / rate ** 2


def entanglement_series(n1: int, n2: int, params: PhysicalParams, times: Sequence[float]) -> np.ndarray:
    """initial_covariance → COM → 演化 → LAB → 对数负性"""
    cov0 = frame_transform(initial_covariance(n1, n2, params))
    out = np.empty(len(times))
    for i, t in enumerate(times):
        lab = frame_transform(evolve_covariance(cov0, t, params))
        out[i] = log_negativity(lab, params.hbar)
    logger.debug(f"E^({n1},{n2}) 计算完成: {len(times)} 个时间点")
    return out

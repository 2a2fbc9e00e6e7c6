"""牛顿势：一维精确势、截断势，以及二维多极展开"""
from enum import Enum
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import NumericalAbort
from .scales import PhysicalParams

MAX_ORDER = 3


class PotentialKind(str, Enum):
    EXACT = "exact"
    TRUNCATED = "truncated"
    FREE = "free"


class PotentialSpec(BaseModel):
    """相对坐标势能的描述"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PotentialKind = PotentialKind.TRUNCATED
    N: int = 3
    theta: float = 1.0
    params: PhysicalParams

    @model_validator(mode="after")
    def _order(self):
        if self.N < 0:
            raise ValueError(f"截断阶数不能为负: {self.N}")
        if self.kind is PotentialKind.TRUNCATED and self.N > MAX_ORDER:
            raise ValueError(f"只支持 N ≤ {MAX_ORDER} 的截断势: N={self.N}")
        return self

    @classmethod
    def from_params(cls, params: PhysicalParams, kind: str = "truncated") -> "PotentialSpec":
        """按参数自带的 N、theta 构造"""
        return cls(kind=kind, N=params.N, theta=params.theta, params=params)

    @property
    def effective_theta(self) -> float:
        # 仅 N = 3 时三次项开关生效
        return self.theta if self.N == 3 else 0.0

    @property
    def is_quadratic(self) -> bool:
        """势能至多二次时量子与经典演化一致"""
        if self.kind is PotentialKind.FREE:
            return True
        if self.kind is PotentialKind.EXACT:
            return False
        return self.N <= 2 or self.effective_theta == 0.0

    def coefficients(self) -> np.ndarray:
        """多项式系数 c_n（V = Σ c_n rⁿ），仅对截断势和自由势有定义"""
        if self.kind is PotentialKind.FREE:
            return np.zeros(1)
        if self.kind is PotentialKind.EXACT:
            raise ValueError("精确势没有有限多项式系数")
        return truncated_coefficients(self.params, self.N, self.effective_theta)

    def value(self, r):
        if self.kind is PotentialKind.FREE:
            return np.zeros_like(np.asarray(r, dtype=float))
        if self.kind is PotentialKind.EXACT:
            return v_exact(r, self.params)
        return v_truncated(r, self)

    def force(self, r):
        """−dV/dr"""
        r = np.asarray(r, dtype=float)
        if self.kind is PotentialKind.FREE:
            return np.zeros_like(r)
        if self.kind is PotentialKind.EXACT:
            _check_collision(r, self.params)
            return -self.params.G * self.params.m ** 2 / (self.params.L + r) ** 2
        c = self.coefficients()
        deriv = np.polynomial.polynomial.polyder(c)
        return -np.polynomial.polynomial.polyval(r, deriv)

    def third_derivative(self, r):
        """V'''(r)"""
        r = np.asarray(r, dtype=float)
        if self.kind is PotentialKind.FREE:
            return np.zeros_like(r)
        if self.kind is PotentialKind.EXACT:
            _check_collision(r, self.params)
            return 6.0 * self.params.G * self.params.m ** 2 / (self.params.L + r) ** 4
        c = self.coefficients()
        return np.polynomial.polynomial.polyval(r, np.polynomial.polynomial.polyder(c, 3)) + 0.0 * r


def truncated_coefficients(params: PhysicalParams, N: int, theta: float = 1.0) -> np.ndarray:
    """V_N = −¼mω² Σ (−1)ⁿ rⁿ / L^{n−2}，三次项乘以 theta"""
    scale = -0.25 * params.m * params.omega ** 2
    coeffs = np.array([scale * (-1.0) ** n * params.L ** (2 - n) for n in range(N + 1)])
    if N >= 3:
        coeffs[3] *= theta
    return coeffs


def taylor_coefficients(params: PhysicalParams, N: int) -> np.ndarray:
    """精确势在 r=0 处的泰勒系数（解析）"""
    # −Gm²/(L+r) = −(Gm²/L) Σ (−r/L)ⁿ
    return np.array([-params.G * params.m ** 2 / params.L * (-1.0 / params.L) ** n for n in range(N + 1)])


def _check_collision(r, params: PhysicalParams) -> None:
    if np.any(params.L + np.asarray(r) <= 0):
        raise NumericalAbort(f"碰撞: 存在 L + r ≤ 0 的位置 (L={params.L:.3e})")


def v_exact(r, params: PhysicalParams):
    """V(r) = −Gm²/(L + r)"""
    r = np.asarray(r, dtype=float)
    if np.any(params.L + r <= 0):
        raise ValueError(f"碰撞: 存在 L + r ≤ 0 的位置 (L={params.L:.3e})")
    return -params.G * params.m ** 2 / (params.L + r)


def v_truncated(r, spec: PotentialSpec):
    """截断到 N 阶的多项式势"""
    coeffs = truncated_coefficients(spec.params, spec.N, spec.effective_theta)
    return np.polynomial.polynomial.polyval(np.asarray(r, dtype=float), coeffs)


def _split(r1, r2) -> Tuple[np.ndarray, ...]:
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    return r1[..., 0], r1[..., 1], r2[..., 0], r2[..., 1]


def v_multipole_2d(r1, r2, order: int, params: PhysicalParams, full: bool = False):
    """二维多极展开

    full=False 只返回产生跨粒子关联的耦合项；full=True 返回完整展开
    （常数项、线性项及单粒子项都保留），用于与精确势比较。
    分隔矢量沿 x 轴：L⃗ = (L, 0)。
    """
    if order not in (2, 3):
        raise ValueError(f"多极展开阶数只能是 2 或 3: {order}")
    x1, y1, x2, y2 = _split(r1, r2)
    k = params.m * params.omega ** 2
    L = params.L

    if not full:
        value = 0.5 * k * (x1 * x2 - 0.5 * y1 * y2)
        if order == 3:
            value = value + 0.75 * k / L * ((x2 - x1) * y1 * y2 + 0.5 * (x1 * y2 ** 2 - x2 * y1 ** 2))
        return value

    a = x2 - x1
    b = y2 - y1
    bracket = L ** 2 - L * a + (a ** 2 - 0.5 * b ** 2)
    if order == 3:
        bracket = bracket + (-a ** 3 + 1.5 * a * b ** 2) / L
    return -0.25 * k * bracket


def grad_multipole_2d(r1, r2, order: int, params: PhysicalParams):
    """完整展开的梯度，返回 (∂V/∂r1, ∂V/∂r2)，形状同输入"""
    if order not in (2, 3):
        raise ValueError(f"多极展开阶数只能是 2 或 3: {order}")
    x1, y1, x2, y2 = _split(r1, r2)
    k = params.m * params.omega ** 2
    L = params.L
    a = x2 - x1
    b = y2 - y1

    # 对 a、b 的偏导
    dva = -L + 2.0 * a
    dvb = -b
    if order == 3:
        dva = dva + (-3.0 * a ** 2 + 1.5 * b ** 2) / L
        dvb = dvb + 3.0 * a * b / L
    dva = -0.25 * k * dva
    dvb = -0.25 * k * dvb

    g2 = np.stack([dva, dvb], axis=-1)
    return -g2, g2


def exact_2d(r1, r2, params: PhysicalParams):
    """精确二维牛顿势 −Gm²/|L⃗ + r2 − r1|"""
    x1, y1, x2, y2 = _split(r1, r2)
    dist = np.hypot(params.L + x2 - x1, y2 - y1)
    return -params.G * params.m ** 2 / dist

"""模拟过程中的异常类型"""


class SimulationError(Exception):
    """模拟错误基类"""


class ConfigError(SimulationError, ValueError):
    """配置无效（CLI 退出码 2）"""

    exit_code = 2


class NumericalAbort(SimulationError, RuntimeError):
    """数值计算中止：网格溢出、碰撞、边缘分布为负等（CLI 退出码 3）"""

    exit_code = 3


class SnapshotError(SimulationError, ValueError):
    """快照文件损坏或版本不兼容"""

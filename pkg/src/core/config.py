from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional, Dict, Any
import os
import json
import logging

import psutil
import yaml

# 设置日志（logger.py 依赖本模块，这里只能用标准 logger）
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def _default_workers() -> int:
    """默认工作线程数：物理核数，至少为1"""
    count = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    return max(1, int(count))


class Settings(BaseSettings):
    # .env 中的其他变量（如 PYTHONPATH）忽略
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")

    # 日志配置
    log_level: str = os.environ.get("LOG_LEVEL", "INFO")
    log_file: Optional[str] = None  # 为空时只输出到控制台
    log_max_size: int = 10 * 1024 * 1024  # 10MB
    log_backup_count: int = 5

    # 计算资源配置
    max_workers: int = _default_workers()  # 最大工作线程数，--threads 可覆盖
    max_memory_mb: int = int(os.environ.get("MAX_MEMORY", "4096"))  # 内存告警阈值，单位MB
    progress: bool = True  # 是否显示进度条

    # 输出配置
    output_root: str = os.environ.get("OUTPUT_ROOT", "./runs")
    ledger_enabled: bool = True  # 是否写入运行台账
    ledger_name: str = "runs.db"

    def ledger_url(self, output_dir: str) -> str:
        """获取运行台账数据库URL"""
        return f"sqlite:///{os.path.join(output_dir, self.ledger_name)}"

    def set_workers(self, workers: Optional[int]) -> None:
        """设置工作线程上限"""
        if workers is None:
            return
        if workers < 1:
            raise ValueError(f"线程数必须为正整数: {workers}")
        self.max_workers = workers
        logger.info(f"工作线程上限: {workers}")


def load_config_file(config_file: str) -> Dict[str, Any]:
    """加载配置文件，支持YAML和JSON格式"""
    if not os.path.exists(config_file):
        raise FileNotFoundError(f"配置文件不存在: {config_file}")

    with open(config_file, 'r', encoding='utf-8') as f:
        if config_file.endswith('.json'):
            config_data = json.load(f)
            logger.info(f"成功加载JSON配置文件: {config_file}")
        else:
            config_data = yaml.safe_load(f)
            logger.info(f"成功加载YAML配置文件: {config_file}")

    if config_data is None:
        return {}
    if not isinstance(config_data, dict):
        raise ValueError(f"配置文件顶层必须是键值映射: {config_file}")
    return expand_dotted_keys(config_data)


def expand_dotted_keys(data: Dict[str, Any]) -> Dict[str, Any]:
    """把 'params.m: 1e-15' 形式的扁平键展开为嵌套段"""
    result: Dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            value = expand_dotted_keys(value)
        parts = str(key).split('.')
        node = result
        for part in parts[:-1]:
            existing = node.setdefault(part, {})
            if not isinstance(existing, dict):
                raise ValueError(f"配置键冲突: {key}")
            node = existing
        leaf = parts[-1]
        if leaf in node and isinstance(node[leaf], dict) and isinstance(value, dict):
            node[leaf].update(value)
        else:
            node[leaf] = value
    return result


# 全局设置实例
settings = Settings()

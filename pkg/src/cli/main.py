"""命令行入口：run / info / inspect / history"""
from pathlib import Path
from typing import Optional
import json
import sys

import click

from ..core.config import settings
from ..core.errors import SimulationError
from ..core.logger import logger
from ..core.scales import PhysicalParams, derive_scales
from ..services.run_config import load_run_config
from ..services.runner import exit_code_for, list_runs, run_experiment
from ..services.snapshot import load_snapshot, read_header


def _fail(message: str, code: int) -> None:
    click.echo(f"错误: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option("1.0.0", prog_name="grav-wigner")
def cli():
    """引力耦合双粒子系统的量子/经典相空间模拟"""


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False))
@click.option("--output", "-o", default=None, help="输出目录，覆盖配置文件中的 output")
@click.option("--threads", "-j", type=int, default=None, help="工作线程上限")
@click.option("--seed", type=int, default=None, help="随机种子，覆盖配置文件")
def run(config: str, output: Optional[str], threads: Optional[int], seed: Optional[int]):
    """按 CONFIG 执行一个实验"""
    try:
        settings.set_workers(threads)
        run_config = load_run_config(config, output=output, seed=seed)
        series = run_experiment(run_config)
    except SimulationError as e:
        _fail(str(e), exit_code_for(e))
    except ValueError as e:
        _fail(str(e), 2)
    except Exception as e:
        logger.error(f"未预期的错误: {e}")
        _fail(str(e), 1)
    click.echo(str(series))


@cli.command()
@click.argument("config", type=click.Path(dir_okay=False), required=False)
@click.option("--param", "-p", multiple=True, help="覆盖参数，如 -p L=1e-4")
@click.option("--t", "t_ref", type=float, default=None, help="计算 ε 的参考时间 (s)，默认取配置的最后检查点")
def info(config: Optional[str], param, t_ref: Optional[float]):
    """校验配置并打印导出尺度（ω、σ_r、σ_p、相空间单位、ε）；未给出 CONFIG 时使用代表性参数"""
    overrides = {}
    for item in param:
        key, sep, value = item.partition("=")
        if not sep:
            _fail(f"参数格式应为 key=value: {item}", 2)
        try:
            overrides[key.strip()] = int(value) if key.strip() == "N" else float(value)
        except ValueError:
            _fail(f"无法解析参数值: {item}", 2)
    try:
        if config is None:
            params = PhysicalParams.representative(**overrides)
            t = t_ref or 0.0
        else:
            run_config = load_run_config(config)
            params = PhysicalParams(**{**run_config.params.model_dump(), **overrides})
            t = run_config.t_final if t_ref is None else t_ref
        scales = derive_scales(params, t)
    except SimulationError as e:
        _fail(str(e), exit_code_for(e))
    except ValueError as e:
        _fail(str(e), 2)
    for key, value in scales.to_dict().items():
        click.echo(f"{key} = {value:.6g}")


@cli.command()
@click.argument("snapshot", type=click.Path(exists=True, dir_okay=False))
@click.option("--verify", is_flag=True, help="完整读取并校验负载")
def inspect(snapshot: str, verify: bool):
    """打印快照头部"""
    try:
        header = read_header(snapshot)
        if verify:
            load_snapshot(snapshot)
    except SimulationError as e:
        _fail(str(e), exit_code_for(e))
    click.echo(json.dumps(header.to_dict(), ensure_ascii=False, indent=2))


@cli.command()
@click.argument("output_dir", type=click.Path(file_okay=False), default=settings.output_root)
def history(output_dir: str):
    """列出输出目录中的运行台账"""
    records = list_runs(output_dir)
    if not records:
        click.echo(f"{Path(output_dir)} 中没有运行记录")
        return
    for r in records:
        line = f"#{r['id']} {r['started_at']} {r['experiment']:<17} {r['status']:<9} seed={r['seed']} {r['digest']}"
        if r["error"]:
            line += f"  ({r['error']})"
        click.echo(line)


def main():
    cli()


if __name__ == "__main__":
    main()

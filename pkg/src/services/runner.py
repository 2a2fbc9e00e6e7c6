"""实验运行器：按配置执行一个实验，写出时间序列、元数据、快照并登记运行台账"""
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional
import math
import os

import numpy as np
import pandas as pd
import psutil

from ..core.classical import (
    FockBasis, GaussianDensity, evolve_classical, min_eigenvalue, nonquantumness_witness,
    resolve_sigma_convention, short_time_lambda, subspace_block, weyl_fock_matrix,
)
from ..core.config import settings
from ..core.database import ArtifactRecord, RunRecord, get_engine, init_db, session_scope
from ..core.errors import SimulationError
from ..core.gaussian import (
    entanglement_series, evolve_covariance, frame_transform, initial_covariance, short_time_E0n,
)
from ..core.logger import logger
from ..core.moments import c_witness, ehrenfest_rate, ensemble_2d
from ..core.quantum import energy, evolve_quantum, moments, purity, wigner_grid, wigner_min, wigner_of
from ..core.scales import WavefunctionState, derive_scales, initial_gaussian
from ..core.witness import (
    MAX_EPSILON, QuadratureTransform, dimensionless_field, direct_witness, estimate_witness, measure_c_gamma,
    optimize_center, pattern_values, perturbative_wigner, sample_complexity, sample_homodyne_state,
)
from ..utils.grid_utils import file_sha256
from .run_config import RunConfig
from .series import write_metadata, write_series, write_yaml
from .snapshot import save_snapshot

# 短时 λ 公式的适用上限 ωt
SHORT_TIME_LIMIT = 0.05
MEMORY_WARNING = 0.8


def exit_code_for(error: BaseException) -> int:
    """异常 → CLI 退出码"""
    if isinstance(error, SimulationError) and hasattr(error, "exit_code"):
        return error.exit_code
    if isinstance(error, ValueError):
        return 2
    return 1


class ExperimentRunner:
    """单次运行：执行实验并管理产出文件"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.output = Path(config.output)
        self.digest = config.digest()
        self.params = config.params
        self.spec = config.potential_spec()
        self.scales = derive_scales(self.params, config.t_final)
        self.engine = None
        self.run_id: Optional[int] = None
        self.artifacts: List[Path] = []
        self.extra_meta: Dict[str, object] = {}
        self._handlers: Dict[str, Callable[[], pd.DataFrame]] = {
            "evolve-quantum": self._evolve_quantum,
            "evolve-classical": self._evolve_classical,
            "equivalence": self._equivalence,
            "gaussian": self._gaussian,
            "witness-wigner": self._witness_wigner,
            "witness-weyl": self._witness_weyl,
            "sample": self._sample,
            "moments": self._moments,
            "ensemble-2d": self._ensemble_2d,
        }

    # 台账

    def _open_ledger(self) -> None:
        if not settings.ledger_enabled:
            return
        self.engine = get_engine(str(self.output))
        init_db(self.engine)
        with session_scope(self.engine) as db:
            record = RunRecord(
                experiment=self.config.experiment,
                config_digest=self.digest,
                seed=self.config.seed,
                output_dir=str(self.output),
                status="running",
                started_at=datetime.now(),
                checkpoints=len(self.config.times),
            )
            db.add(record)
            db.flush()
            self.run_id = record.id

    def _close_ledger(self, status: str, exit_code: int, error: Optional[str] = None) -> None:
        if self.engine is None or self.run_id is None:
            return
        try:
            with session_scope(self.engine) as db:
                record = db.query(RunRecord).filter(RunRecord.id == self.run_id).first()
                record.status = status
                record.exit_code = exit_code
                record.error_message = error
                record.completed_at = datetime.now()
                for path in self.artifacts:
                    db.add(ArtifactRecord(
                        run_id=self.run_id, kind=_artifact_kind(path), path=str(path),
                        size=os.path.getsize(path), sha256=file_sha256(str(path)),
                    ))
        except Exception as e:
            logger.error(f"更新运行台账失败: {e}")

    # 运行

    def run(self) -> Path:
        """执行实验；异常记录到台账后重新抛出"""
        experiment = self.config.experiment
        self.output.mkdir(parents=True, exist_ok=True)
        self._open_ledger()
        logger.info(f"开始运行: {experiment} → {self.output} (摘要 {self.digest[:12]})")
        try:
            frame = self._handlers[experiment]()
            self._check_memory(experiment)
            series = write_series(frame, self.output / "series.csv", self._csv_header())
            self.artifacts.append(series)
            self.artifacts.append(write_metadata(
                self.output / "metadata.yaml", frame.columns, self.digest,
                extra={"experiment": experiment, **self.extra_meta},
            ))
            self.artifacts.append(write_yaml(
                self.output / "config.resolved.yaml", self.config.model_dump(mode="json"),
            ))
            self._close_ledger("completed", 0)
            logger.info(f"运行完成: {experiment}, {len(frame)} 行")
            return series
        except Exception as e:
            logger.error(f"运行失败: {experiment}: {e}")
            self._close_ledger("failed", exit_code_for(e), str(e))
            raise

    def _csv_header(self) -> Dict[str, object]:
        p = self.params
        return {
            "experiment": self.config.experiment,
            "config_digest": self.digest,
            "seed": self.config.seed,
            "m": repr(p.m),
            "L": repr(p.L),
            "sigma": repr(p.sigma),
            "N": p.N,
            "theta": repr(p.theta),
            "omega": repr(self.scales.omega),
        }

    def _check_memory(self, stage: str) -> None:
        """进程内存超过上限的 80% 时告警"""
        try:
            rss_mb = psutil.Process().memory_info().rss / (1024 * 1024)
        except Exception as e:
            logger.error(f"检查内存使用失败: {e}")
            return
        if rss_mb > MEMORY_WARNING * settings.max_memory_mb:
            logger.warning(f"{stage}: 进程内存 {rss_mb:.0f}MB 接近上限 {settings.max_memory_mb}MB")

    def _snapshot(self, obj, name: str) -> None:
        if not self.config.snapshots:
            return
        path = save_snapshot(obj, self.output / "snapshots" / f"{name}.wwps", digest=self.digest)
        self.artifacts.append(path)

    # 公共步骤

    def _grids(self):
        return self.config.grid.resolve(self.params, self.config.t_final)

    def _quantum_states(self, state_grid) -> List[WavefunctionState]:
        state0 = initial_gaussian(self.scales, state_grid)
        return evolve_quantum(state0, self.spec, self.config.t_final, dt=self.config.dt,
                              checkpoints=self.config.times)

    def _classical_start(self, grid):
        return GaussianDensity.from_scales(self.scales).on_grid(grid, self.params.hbar)

    def _omega_t(self, t: float) -> float:
        return self.scales.omega * t

    # 实验

    def _evolve_quantum(self) -> pd.DataFrame:
        state_grid, field_grid = self._grids()
        hbar = self.params.hbar
        rows = []
        for i, state in enumerate(self._quantum_states(state_grid)):
            field = wigner_of(state, field_grid)
            found = wigner_min(field)
            mom = moments(state)
            rows.append({
                "t": state.t, "omega_t": self._omega_t(state.t),
                "wigner_min": hbar * found.value, "r_loc": found.r_loc, "p_loc": found.p_loc,
                **_moment_columns(mom),
                "norm": state.norm(), "purity": purity(field), "energy": energy(state, self.spec),
            })
            self._snapshot(state, f"wavefunction_{i:04d}")
            self._snapshot(field, f"wigner_{i:04d}")
        return pd.DataFrame(rows)

    def _evolve_classical(self) -> pd.DataFrame:
        _, field_grid = self._grids()
        f0 = self._classical_start(field_grid)
        hbar = self.params.hbar
        rows = []
        for i, t in enumerate(self.config.times):
            field = evolve_classical(f0, self.spec, t)
            rows.append({
                "t": t, "omega_t": self._omega_t(t),
                "field_min": hbar * float(field.values.min()),
                **_moment_columns(moments(field)),
                "norm": field.norm(),
            })
            self._snapshot(field, f"classical_{i:04d}")
        return pd.DataFrame(rows)

    def _equivalence(self) -> pd.DataFrame:
        state_grid, field_grid = self._grids()
        _, out_grid, _ = wigner_grid(state_grid, field_grid, self.params.hbar)
        f0 = self._classical_start(out_grid)
        rows = []
        for state in self._quantum_states(state_grid):
            quantum = wigner_of(state, field_grid)
            classical = evolve_classical(f0, self.spec, state.t)
            linf = float(np.max(np.abs(quantum.values - classical.values)))
            peak = quantum.max_abs()
            rows.append({
                "t": state.t, "omega_t": self._omega_t(state.t),
                "linf": linf, "field_max": peak, "linf_rel": linf / peak,
            })
            logger.info(f"t={state.t:.4g}: 量子与经典场的 L∞ 相对偏差 {linf / peak:.3e}")
        return pd.DataFrame(rows)

    def _gaussian(self) -> pd.DataFrame:
        times = self.config.times
        frame = pd.DataFrame({"t": times, "omega_t": [self._omega_t(t) for t in times]})
        for n1, n2 in self.config.fock_pairs:
            frame[f"E_{n1}_{n2}"] = entanglement_series(n1, n2, self.params, times)
            if n1 == 0 and n2 > 0:
                frame[f"E_{n1}_{n2}_short"] = [short_time_E0n(n2, t, self.params) for t in times]
        if self.config.snapshots:
            cov0 = frame_transform(initial_covariance(0, 0, self.params))
            self._snapshot(frame_transform(evolve_covariance(cov0, times[-1], self.params)), "covariance_0_0")
        return frame

    def _witness_wigner(self) -> pd.DataFrame:
        state_grid, field_grid = self._grids()
        hbar = self.params.hbar
        cfg = self.config.witness
        rows = []
        for i, state in enumerate(self._quantum_states(state_grid)):
            field = wigner_of(state, field_grid)
            found = wigner_min(field)
            eps = derive_scales(self.params, state.t).epsilon
            row = {
                "t": state.t, "omega_t": self._omega_t(state.t),
                "wigner_min": hbar * found.value, "r_loc": found.r_loc, "p_loc": found.p_loc,
                "r_offset": found.r_offset, "p_offset": found.p_offset,
                "skew_p": moments(state).skew_p, "epsilon": eps,
                "w_tail_pert": perturbative_wigner(self.params, state.t).w_tail if eps < MAX_EPSILON else math.nan,
            }
            if cfg is not None:
                scaled = dimensionless_field(field, self.scales)
                if self.config.optimize_center:
                    _, value = optimize_center(scaled, cfg.delta)
                else:
                    value = direct_witness(scaled, cfg)
                row["witness"] = value
            rows.append(row)
            self._snapshot(field, f"wigner_{i:04d}")
        if self.scales.epsilon < MAX_EPSILON:
            self.extra_meta["perturbative"] = perturbative_wigner(self.params, self.config.t_final).to_dict()
        return pd.DataFrame(rows)

    def _witness_weyl(self) -> pd.DataFrame:
        _, field_grid = self._grids()
        f0 = self._classical_start(field_grid)
        basis0 = FockBasis.for_scales(self.scales, dim=self.config.fock_dim)
        convention = resolve_sigma_convention(self.params)
        self.extra_meta["sigma_convention"] = convention
        rows = []
        for i, t in enumerate(self.config.times):
            field = evolve_classical(f0, self.spec, t)
            w = weyl_fock_matrix(field, basis0.centered_on(moments(field)))
            block = subspace_block(w)
            short = short_time_lambda(self.params, t, convention["chosen"]) \
                if self._omega_t(t) < SHORT_TIME_LIMIT else math.nan
            rows.append({
                "t": t, "omega_t": self._omega_t(t),
                "lambda_min": min_eigenvalue(w), "lambda_min_12": block.value,
                "lambda_short": short, "lambda_phase": block.phase,
                "projector": nonquantumness_witness(w), "leakage": w.leakage,
            })
            self._snapshot(w, f"weyl_{i:04d}")
        return pd.DataFrame(rows)

    def _sample(self) -> pd.DataFrame:
        state_grid, field_grid = self._grids()
        state = self._quantum_states(state_grid)[-1]
        scaled = dimensionless_field(wigner_of(state, field_grid), self.scales)
        cfg = self.config.witness
        if self.config.optimize_center:
            cfg, direct = optimize_center(scaled, cfg.delta)
        else:
            direct = direct_witness(scaled, cfg)

        transform = QuadratureTransform(state, self.scales)
        batch = sample_homodyne_state(transform, self.config.samples, self.config.seed, n_phi=self.config.n_phi)
        self.artifacts.append(write_series(batch.to_frame(), self.output / "samples.csv",
                                           {"seed": self.config.seed, "config_digest": self.digest}))
        est = estimate_witness(batch, cfg)
        c_gamma = measure_c_gamma(transform, cfg)
        row = {
            "t": state.t, "delta": cfg.delta, "r0": cfg.center[0], "p0": cfg.center[1],
            "estimate": est.estimate, "standard_error": est.standard_error, "direct": direct,
            "c_gamma": c_gamma, "variance": float(np.var(pattern_values(batch, cfg), ddof=1)),
            "variance_model": c_gamma / cfg.delta ** 3,
            "samples_required": sample_complexity(cfg, direct, c_gamma) if direct < 0 else math.nan,
        }
        logger.info(f"见证估计 {est.estimate:.4e} ± {est.standard_error:.2e}，直接积分 {direct:.4e}")
        return pd.DataFrame([row])

    def _moments(self) -> pd.DataFrame:
        state_grid, field_grid = self._grids()
        if self.config.moments_source == "quantum":
            trajectory = [moments(s) for s in self._quantum_states(state_grid)]
        else:
            f0 = self._classical_start(field_grid)
            trajectory = [moments(evolve_classical(f0, self.spec, t)) for t in self.config.times]
        frame = pd.DataFrame([{**_moment_columns(m), "t": m.t, "second_r": m.second_r} for m in trajectory])
        frame = frame[["t"] + [c for c in frame.columns if c != "t"]]
        frame["C"] = c_witness(trajectory, self.params)
        if len(trajectory) >= 2:
            frame["dC_dt"] = np.gradient(frame["C"].to_numpy(), frame["t"].to_numpy(),
                                         edge_order=2 if len(trajectory) >= 3 else 1)
        frame["ehrenfest"] = [ehrenfest_rate(m, self.params) for m in trajectory]
        return frame

    def _ensemble_2d(self) -> pd.DataFrame:
        cfg = self.config.ensemble
        if "seed" not in cfg.model_fields_set:
            cfg = cfg.model_copy(update={"seed": self.config.seed})
        report = ensemble_2d(cfg, self.params)
        path = self.output / "report.txt"
        path.write_text(report.to_text(), encoding="utf-8")
        self.artifacts.append(path)
        row = {"n_traj": report.n_traj, "order": report.order, "t_final": report.t_final}
        for name, value in report.values.items():
            row[name] = value
            row[f"{name}_se"] = report.errors[name]
        row["energy_drift"] = report.energy_drift
        return pd.DataFrame([row])


def _moment_columns(m) -> Dict[str, float]:
    return {
        "mean_r": m.mean_r, "mean_p": m.mean_p, "var_r": m.var_r, "var_p": m.var_p,
        "cov_rp": m.cov_rp, "mu3_p": m.mu3_p, "skew_p": m.skew_p,
    }


def _artifact_kind(path: Path) -> str:
    name = path.name
    if name == "series.csv":
        return "series"
    if name == "samples.csv":
        return "samples"
    if name.endswith(".wwps"):
        return "snapshot"
    if name.endswith(".txt"):
        return "report"
    return "metadata"


def run_experiment(config: RunConfig) -> Path:
    return ExperimentRunner(config).run()


def list_runs(output_dir: str) -> List[Dict[str, object]]:
    """读取输出目录下的运行台账"""
    ledger = Path(output_dir) / settings.ledger_name
    if not ledger.exists():
        return []
    engine = get_engine(output_dir)
    with session_scope(engine) as db:
        records = db.query(RunRecord).order_by(RunRecord.id).all()
        return [{
            "id": r.id, "experiment": r.experiment, "status": r.status, "seed": r.seed,
            "digest": r.config_digest[:12], "exit_code": r.exit_code,
            "started_at": r.started_at.isoformat(timespec="seconds") if r.started_at else "",
            "error": r.error_message or "",
        } for r in records]

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.checkpoint_utils import (
    CheckpointError,
    Checkpointer,
    config_hash,
    latest_checkpoint,
    load_checkpoint,
    restore_scheme,
)
from utils.config_utils import RunConfig
from utils.functional_utils import ForceEvaluator, ForceSample
from utils.geometry_utils import build_domain
from utils.io_utils import TraceWriter, read_trace, read_trace_table, truncate_trace, write_json, write_sweep_table
from utils.mesh_utils import Mesh, generate_mesh, load_mesh, save_mesh
from utils.plot_utils import plot_forces, plot_period_histogram, plot_phase_diagram
from utils.scheme_utils import FieldState, Scheme, SchemeError, create_scheme, run_scheme
from utils.strouhal_utils import (
    NoPeriodDetected,
    PeriodEstimate,
    StrouhalAnalyzer,
    TraceError,
    TraceSeries,
)

logger = logging.getLogger(__name__)


class TraceRecorder:
    """Step observer: samples forces every `stride` steps and appends them to the trace."""

    def __init__(self, evaluator: ForceEvaluator, writer: TraceWriter, stride: int):
        self.evaluator = evaluator
        self.writer = writer
        self.stride = stride
        self.last: Optional[ForceSample] = None

    def record(self, state: FieldState) -> ForceSample:
        sample = self.evaluator.sample(state)
        if not np.isfinite(sample.drag) or not np.isfinite(sample.energy):
            logger.error(f"Non-finite drag or energy at t={state.t:.6g}")
        self.writer.write([sample])
        self.last = sample
        return sample

    def __call__(self, scheme: Scheme, state: FieldState) -> None:
        if state.step % self.stride:
            return
        s = self.record(state)
        logger.info(
            f"t={s.t:.4f} drag={s.drag:.6f} lift={s.lift:.6f} div={s.div_norm:.3e} "
            f"newton={scheme.stats.newton_iterations} refactor={scheme.stats.refactorizations}"
        )


class RunProcessor:
    """One benchmark run: mesh, scheme, time loop, trace, checkpoints and summary."""

    TRACE_FILE = "trace.csv"
    SUMMARY_FILE = "summary.json"
    MESH_FILE = "mesh.nsmesh"
    CHECKPOINT_DIR = "checkpoints"

    def __init__(self, config: RunConfig, mesh_path: Optional[Union[str, Path]] = None,
                 output_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.mesh_path = Path(mesh_path) if mesh_path else (Path(config.mesh.path) if config.mesh.path else None)
        self.output_dir = Path(output_dir) if output_dir else Path(config.output.directory) / config.run_name
        self.hash = config_hash(config.hash_payload())

    @property
    def trace_path(self) -> Path:
        return self.output_dir / self.TRACE_FILE

    @property
    def summary_path(self) -> Path:
        return self.output_dir / self.SUMMARY_FILE

    def prepare_mesh(self) -> Mesh:
        if self.mesh_path is not None:
            logger.info(f"Loading mesh {self.mesh_path}")
            return load_mesh(self.mesh_path)
        logger.info(f"Generating mesh with h_max={self.config.mesh.h_max}")
        mesh = generate_mesh(build_domain(self.config.domain()), self.config.mesh.params())
        save_mesh(mesh, self.output_dir / self.MESH_FILE)
        return mesh

    def _start(self, scheme: Scheme, resume: Union[bool, str, Path, None]) -> FieldState:
        if resume:
            path = latest_checkpoint(self.output_dir / self.CHECKPOINT_DIR) if resume is True else Path(resume)
            if path is None:
                raise CheckpointError(f"No checkpoint found under {self.output_dir / self.CHECKPOINT_DIR}")
            checkpoint = load_checkpoint(path, expected_hash=self.hash)
            state = restore_scheme(scheme, checkpoint)
            truncate_trace(self.trace_path, state.t)
            logger.info(f"Resumed from {path} at t={state.t:.6g} (step {state.step})")
            return state
        if self.trace_path.exists():
            self.trace_path.unlink()
        return scheme.initialize()

    def run(self, resume: Union[bool, str, Path, None] = None) -> Dict[str, Any]:
        """Execute the run; the partial trace stays on disk if the time loop fails."""
        started = time.perf_counter()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        config = self.config

        # Mesh and discretization
        mesh = self.prepare_mesh()
        scheme = create_scheme(config.scheme_config(), mesh)
        evaluator = ForceEvaluator(scheme, extension=config.analysis.extension)

        # Initial state or checkpoint
        state = self._start(scheme, resume)
        writer = TraceWriter(self.trace_path)
        recorder = TraceRecorder(evaluator, writer, config.output.stride)
        if not resume:
            recorder.record(state)
        observers = [recorder]
        if config.output.checkpoint_every:
            observers.append(
                Checkpointer(self.output_dir / self.CHECKPOINT_DIR, self.hash, config.output.checkpoint_every)
            )

        # Time loop
        status, message = "ok", ""
        try:
            state = run_scheme(scheme, state, config.t_end, observers)
        except SchemeError as e:
            status, message = "failed", str(e)
            logger.error(f"{scheme.name} aborted: {e}")
            summary = self._summary(scheme, state, started, status, message)
            summary["steps"] = getattr(e, "step", None) or summary["steps"]
            write_json(self.summary_path, summary)
            raise

        summary = self._summary(scheme, state, started, status, message)
        write_json(self.summary_path, summary)
        logger.info(f"Run {config.run_name} finished in {summary['wall_clock']:.1f}s, summary {self.summary_path}")
        return summary

    def _summary(self, scheme: Scheme, state: FieldState, started: float, status: str, message: str) -> Dict[str, Any]:
        config = self.config
        summary: Dict[str, Any] = {
            "run": config.run_name,
            "scheme": scheme.name,
            "reynolds": config.reynolds,
            "dt": config.scheme.dt,
            "h_max": config.mesh.h_max,
            "steps": state.step,
            "t_final": state.t,
            "status": status,
            "message": message,
            "wall_clock": time.perf_counter() - started,
            "newton": scheme.stats.as_dict(),
            "config_hash": self.hash,
            "trace": str(self.trace_path),
        }
        try:
            table = read_trace_table(self.trace_path)
        except TraceError as e:
            logger.warning(f"Cannot read back the trace: {e}")
            return summary
        summary["max_div_norm"] = float(np.max(table["div_l2"])) if len(table["t"]) else None
        window = (config.analysis.t_start, config.analysis.t_end)
        mask = (table["t"] >= window[0]) & (table["t"] <= window[1])
        if state.t >= window[1] and mask.any():
            summary["mean_drag"] = float(np.mean(table["drag_b"][mask]))
            summary["mean_lift"] = float(np.mean(table["lift_b"][mask]))
            summary["mean_drag_volume"] = float(np.nanmean(table["drag_vol"][mask]))
            summary["period"] = self._period(read_trace(self.trace_path))
        return summary

    def _period(self, trace: TraceSeries) -> Optional[Dict[str, Any]]:
        a = self.config.analysis
        analyzer = StrouhalAnalyzer(scaling=a.scaling, bins=a.bins)
        try:
            estimate = analyzer.estimate(trace, (a.t_start, a.t_end), a.initial_guess)
        except (NoPeriodDetected, TraceError) as e:
            logger.warning(f"No period estimate: {e}")
            return None
        if self.config.output.plots:
            write_analysis_plots(trace.window(a.t_start, a.t_end), estimate, self.output_dir, self.config.run_name)
        return estimate.summary()


def write_analysis_plots(trace: TraceSeries, estimate: Optional[PeriodEstimate], directory: Union[str, Path],
                         title: str = "") -> List[Path]:
    directory = Path(directory)
    paths = [
        plot_phase_diagram(trace, directory / "phase.svg", title or None),
        plot_forces(trace, directory / "forces.svg", title or None),
    ]
    if estimate is not None:
        paths.append(plot_period_histogram(estimate, directory / "histogram.svg"))
    return paths


def analyze_trace(
    trace: TraceSeries,
    window: Sequence[float],
    initial_guess: float,
    analyzer: Optional[StrouhalAnalyzer] = None,
) -> Tuple[PeriodEstimate, Dict[str, Any]]:
    """Period estimate and the JSON payload written by the analyze command."""
    estimate = (analyzer or StrouhalAnalyzer()).estimate(trace, (float(window[0]), float(window[1])), initial_guess)
    result = estimate.summary()
    result["samples"] = estimate.samples
    result["histogram"] = estimate.histogram.model_dump()
    return estimate, result


def _sweep_worker(config_data: Dict[str, Any], mesh_path: Optional[str], output_dir: str) -> Dict[str, Any]:
    """Run one sweep member in its own process; failures are reported, not raised."""
    config = RunConfig.model_validate(config_data)
    row: Dict[str, Any] = {"reynolds": config.reynolds, "status": "ok", "message": ""}
    try:
        summary = RunProcessor(config, mesh_path=mesh_path, output_dir=output_dir).run()
        row["mean_drag"] = summary.get("mean_drag")
        period = summary.get("period") or {}
        row["mean_period"] = period.get("mean_period")
        row["std_period"] = period.get("std_period")
        row["classification"] = period.get("classification")
    except Exception as e:
        logging.getLogger(__name__).error(f"Sweep run Re={config.reynolds:g} failed: {e}")
        row.update(status="failed", message=str(e))
    return row


class SweepProcessor:
    """Independent runs over a list of Reynolds numbers, one process per run."""

    SUMMARY_FILE = "sweep.csv"

    def __init__(self, config: RunConfig, reynolds: Sequence[float], workers: int = 1,
                 mesh_path: Optional[Union[str, Path]] = None, output_dir: Optional[Union[str, Path]] = None):
        self.config = config
        self.reynolds = [float(r) for r in reynolds]
        self.workers = max(1, workers)
        self.mesh_path = Path(mesh_path) if mesh_path else None
        self.output_dir = Path(output_dir) if output_dir else Path(config.output.directory) / "sweep"

    def _shared_mesh(self) -> Optional[str]:
        if self.mesh_path is not None:
            return str(self.mesh_path)
        if self.config.mesh.path:
            return self.config.mesh.path
        path = self.output_dir / RunProcessor.MESH_FILE
        if not path.exists():
            mesh = generate_mesh(build_domain(self.config.domain()), self.config.mesh.params())
            save_mesh(mesh, path)
        return str(path)

    def run(self) -> List[Dict[str, Any]]:
        if not self.reynolds:
            logger.info("Empty Reynolds list, nothing to do")
            return []
        self.output_dir.mkdir(parents=True, exist_ok=True)
        mesh_path = self._shared_mesh()
        jobs = []
        for re in self.reynolds:
            member = self.config.with_reynolds(re)
            jobs.append((member.model_dump(), mesh_path, str(self.output_dir / member.run_name)))
        logger.info(f"Sweep over Re={self.reynolds} with {self.workers} worker(s)")
        if self.workers == 1:
            rows = [_sweep_worker(*job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                rows = list(pool.map(_sweep_worker, *zip(*jobs)))
        write_sweep_table(self.output_dir / self.SUMMARY_FILE, rows)
        failed = sum(r["status"] != "ok" for r in rows)
        logger.info(f"Sweep finished: {len(rows) - failed} ok, {failed} failed")
        return rows

"""
Run checkpoints: one .npz container per checkpoint.

Stored: format version, config hash, time level, velocity/pressure
coefficients, velocity history, solver state (cached Jacobian point),
solver statistics and a JSON blob for observer state. A checkpoint is only
accepted for a run whose config hash matches.
"""

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Union

import numpy as np

from utils.scheme_utils import FieldState, Scheme

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable checkpoint or checkpoint of a different run."""


def config_hash(payload: Mapping[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    config_hash: str
    state: FieldState
    solver: Dict[str, np.ndarray] = field(default_factory=dict)
    stats: Dict[str, int] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write atomically (temporary file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = checkpoint.state
    arrays: Dict[str, np.ndarray] = {
        "version": np.array(CHECKPOINT_VERSION),
        "config_hash": np.array(checkpoint.config_hash),
        "t": np.array(state.t, dtype=float),
        "step": np.array(state.step, dtype=np.int64),
        "u": state.u,
        "p": state.p,
        "n_history": np.array(len(state.history)),
        "stats": np.array(json.dumps(checkpoint.stats)),
        "extra": np.array(json.dumps(checkpoint.extra)),
    }
    for i, h in enumerate(state.history):
        arrays[f"history_{i}"] = h
    for key, value in checkpoint.solver.items():
        arrays[f"solver_{key}"] = value
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info(f"Checkpoint written: {path} (t={state.t:.6g}, step {state.step})")
    return path


def load_checkpoint(path: Union[str, Path], expected_hash: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
            stored_hash = str(data["config_hash"])
            if expected_hash is not None and stored_hash != expected_hash:
                raise CheckpointError(
                    f"{path} was written by a run with a different configuration "
                    f"(hash {stored_hash[:12]}..., expected {expected_hash[:12]}...)"
                )
            history = [np.array(data[f"history_{i}"]) for i in range(int(data["n_history"]))]
            state = FieldState(
                t=float(data["t"]), step=int(data["step"]), u=np.array(data["u"]), p=np.array(data["p"]),
                history=history,
            )
            solver = {key[len("solver_"):]: np.array(data[key]) for key in data.files if key.startswith("solver_")}
            stats = json.loads(str(data["stats"]))
            extra = json.loads(str(data["extra"]))
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return Checkpoint(config_hash=stored_hash, state=state, solver=solver, stats=stats, extra=extra)


def checkpoint_path(directory: Union[str, Path], step: int) -> Path:
    return Path(directory) / f"checkpoint_{step:08d}.npz"


def latest_checkpoint(directory: Union[str, Path]) -> Optional[Path]:
    found = sorted(Path(directory).glob("checkpoint_*.npz"))
    return found[-1] if found else None


def restore_scheme(scheme: Scheme, checkpoint: Checkpoint) -> FieldState:
    """Put `scheme` back into the solver state stored in `checkpoint`."""
    V, Q = scheme.velocity_space, scheme.pressure_space
    state = checkpoint.state
    if len(state.u) != V.n_dofs or len(state.p) != Q.n_dofs:
        raise CheckpointError(
            f"Checkpoint has {len(state.u)}/{len(state.p)} velocity/pressure dofs, "
            f"scheme {scheme.name} has {V.n_dofs}/{Q.n_dofs}"
        )
    scheme.restore_solver_state(checkpoint.solver)
    for key, value in checkpoint.stats.items():
        if hasattr(scheme.stats, key):
            setattr(scheme.stats, key, int(value))
    return state


class Checkpointer:
    """Step observer writing a checkpoint every `every` steps."""

    def __init__(
        self,
        directory: Union[str, Path],
        hash_: str,
        every: int,
        extra: Optional[Callable[[], Dict[str, Any]]] = None,
        keep: int = 2,
    ):
        self.directory = Path(directory)
        self.hash = hash_
        self.every = every
        self.extra = extra
        self.keep = keep

    def save(self, scheme: Scheme, state: FieldState) -> Path:
        checkpoint = Checkpoint(
            config_hash=self.hash,
            state=state,
            solver=scheme.solver_state(),
            stats=scheme.stats.as_dict(),
            extra=self.extra() if self.extra else {},
        )
        path = save_checkpoint(checkpoint_path(self.directory, state.step), checkpoint)
        old = sorted(self.directory.glob("checkpoint_*.npz"))[: -self.keep]
        for stale in old:
            stale.unlink()
        return path

    def __call__(self, scheme: Scheme, state: FieldState) -> None:
        if self.every > 0 and state.step % self.every == 0:
            self.save(scheme, state)

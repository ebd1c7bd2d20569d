"""Fixed-step explicit IVP solvers over batched row-wise states.

States are (rows, dim) arrays (or autodiff Vars — the steppers are written
against the shared operator surface, so the same code integrates taped and
untaped states). Times and step sizes may be scalars or (rows, 1) columns,
which is how intervals of different lengths per row are advanced in lockstep:
every interval is rescaled to the unit interval and solved in the same number
of steps, so a zero-length interval freezes its row exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import raw


class SolverError(RuntimeError):
    """Raised when an integration produces non-finite state."""


@dataclass(frozen=True)
class SolverConfig:
    method: str = "euler"  # {"euler", "rk4"}
    steps_per_interval: int = 16

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.steps_per_interval < 1:
            raise ValueError("steps_per_interval must be >= 1")


@dataclass
class StateBlock:
    """Stacked per-trajectory states with each row's own clock origin."""

    values: np.ndarray  # (rows, dim)
    start_times: np.ndarray  # (rows,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.start_times = np.asarray(self.start_times, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("StateBlock values must be 2-D (rows, dim)")
        if self.start_times.shape != (self.values.shape[0],):
            raise ValueError("one start time per row required")
        if not np.isfinite(self.values).all():
            raise ValueError("StateBlock entries must be finite")


def _check_field(dy) -> None:
    vals = raw(dy)
    if not np.isfinite(vals).all():
        raise SolverError("vector field produced non-finite output")


def step_euler(f, y, t, h):
    """One explicit Euler step: y + h * f(t, y)."""
    k = f(t, y)
    _check_field(k)
    return y + h * k


def step_rk4(f, y, t, h):
    """One classical Runge-Kutta step, h/6 * (k1 + 2 k2 + 2 k3 + k4)."""
    half = h * 0.5
    k1 = f(t, y)
    k2 = f(t + half, y + half * k1)
    k3 = f(t + half, y + half * k2)
    k4 = f(t + h, y + h * k3)
    _check_field(k4)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STEPPERS = {"euler": step_euler, "rk4": step_rk4}


def integrate_interval(f, y0, t_start, t_end, cfg: SolverConfig, record: bool = False):
    """Integrate dy/dt = f(t, y) from t_start to t_end in cfg.steps_per_interval steps.

    Internally the interval is substituted onto s in [0, 1], which for explicit
    fixed-step methods is identical to stepping with h = (t_end - t_start)/steps;
    t_start/t_end may be per-row columns. A zero-length interval returns y0.
    With record=True also returns the state at every sub-node (steps+1 entries,
    including y0), as plain arrays.
    """
    step = _STEPPERS[cfg.method]
    n = cfg.steps_per_interval
    span = np.asarray(t_end, dtype=np.float64) - np.asarray(t_start, dtype=np.float64)
    if np.any(span < 0):
        raise ValueError("t_end must be >= t_start")
    h = span / n
    y = y0
    nodes = [raw(y0).copy()] if record else None
    for m in range(n):
        t_m = t_start + m * h
        try:
            y = step(f, y, t_m, h)
        except SolverError as exc:
            raise SolverError(f"{exc} at step {m}") from exc
        vals = raw(y)
        if not np.isfinite(vals).all():
            raise SolverError(f"non-finite state after step {m}")
        if record:
            nodes.append(vals.copy())
    if record:
        return y, nodes
    return y

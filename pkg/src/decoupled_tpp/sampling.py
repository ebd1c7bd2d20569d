"""Thinning-based next-event sampling from a trained model.

The model's ground intensity after a history is tabulated once on a dense
sub-step grid by an augmented pass; the generic probe-based thinning sampler
then draws from the interpolated rate (the grid is the same resolution the
evaluators use, so interpolation error is far below sampling noise).
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data import Sequence
from .hawkes import ThinningConfig, sample_next_event
from .likelihood import density_passes
from .model import DecoupledModel, HorizonConfig
from .solver import SolverConfig


def model_intensity_grid(
    model: DecoupledModel,
    seq: Sequence,
    cut: int | None = None,
    cfg: SolverConfig = SolverConfig("rk4", 64),
    horizon_cfg: HorizonConfig = HorizonConfig(),
):
    """Tabulate lambda_g(t | first `cut` events) from the last observed event
    out to the full extension cap; returns (grid, lam, mark_probs_grid)."""
    cut = len(seq) if cut is None else cut
    full_span = replace(horizon_cfg, density_target=np.inf)  # never stop early
    res = density_passes(model, seq, [cut], cfg, full_span, record_marks=True)[0]
    return res.times, res.lam, res.mark_probs_track


def sample_from_model(
    model: DecoupledModel,
    seq: Sequence,
    num_samples: int,
    rng: np.random.Generator,
    cfg: SolverConfig = SolverConfig("rk4", 64),
    horizon_cfg: HorizonConfig = HorizonConfig(),
    thinning: ThinningConfig | None = None,
    cut: int | None = None,
) -> list[tuple[float, int]]:
    """Draw (t, k) samples of the next event after the observed history.

    Draws beyond the tabulated horizon are censored (dropped), mirroring the
    truncation of the expected-time integral at the same horizon.
    """
    grid, lam, marks = model_intensity_grid(model, seq, cut, cfg, horizon_cfg)
    t_from = float(grid[0])
    t_max = float(grid[-1])

    def lam_fn(t):
        return float(np.interp(t, grid, lam))

    def mark_fn(t):
        idx = min(np.searchsorted(grid, t), grid.size - 1)
        return marks[idx]

    tcfg = thinning or ThinningConfig()
    tcfg = replace(tcfg, t_max=min(tcfg.t_max, t_max))
    draws = []
    for _ in range(num_samples):
        out = sample_next_event(lam_fn, t_from, rng, tcfg, mark_fn=mark_fn)
        if out is not None:
            draws.append((float(out[0]), int(out[1])))
    return draws

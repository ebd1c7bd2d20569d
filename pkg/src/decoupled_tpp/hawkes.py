"""Multivariate exponential-kernel Hawkes ground truth.

Kernel of source mark k' on target mark k: alpha[k,k'] * beta[k,k'] *
exp(-beta[k,k'] * s), so each kernel integrates to alpha[k,k'] and the
branching matrix is alpha itself. Provides exact intensities, closed-form
compensators and negative log-likelihood, thinning simulation, and a generic
probe-based next-event sampler usable with any intensity callable.

A spec with negative alpha entries (inhibitory interactions) is supported by
rectifying the intensity at zero; simulation stays exact (the positive part
dominates), but the closed-form likelihood is then unavailable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Sequence


@dataclass
class HawkesSpec:
    baseline: np.ndarray  # (K,)
    alpha: np.ndarray  # (K, K), alpha[k, k'] = mass of k' -> k influence
    beta: np.ndarray  # (K, K), decay rates > 0

    def __post_init__(self):
        self.baseline = np.atleast_1d(np.asarray(self.baseline, dtype=np.float64))
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=np.float64))
        k = self.baseline.shape[0]
        if self.alpha.shape != (k, k) or self.beta.shape != (k, k):
            raise ValueError("alpha and beta must be (K, K) for K baselines")
        if np.any(self.baseline < 0):
            raise ValueError("baselines must be non-negative")
        if np.any(self.beta <= 0):
            raise ValueError("decays must be positive")
        if not (
            np.isfinite(self.baseline).all()
            and np.isfinite(self.alpha).all()
            and np.isfinite(self.beta).all()
        ):
            raise ValueError("spec parameters must be finite")
        if self.branching_radius() >= 1.0:
            raise ValueError("branching matrix spectral radius must be < 1 (non-stationary spec)")

    @property
    def num_marks(self) -> int:
        return self.baseline.shape[0]

    @property
    def inhibitory(self) -> bool:
        return bool(np.any(self.alpha < 0))

    def branching_radius(self) -> float:
        """Spectral radius of the excitation mass matrix.

        Inhibitory (negative) entries only ever reduce the intensity, so the
        stationarity bound uses the positive part of the branching matrix.
        """
        return float(np.abs(np.linalg.eigvals(np.maximum(self.alpha, 0.0))).max())

    def stationary_rate(self) -> np.ndarray:
        """(I - A)^{-1} v, the long-run event rate per mark (exact only for a
        non-inhibitory spec; an upper-bound proxy otherwise)."""
        k = self.num_marks
        return np.linalg.solve(np.eye(k) - np.maximum(self.alpha, 0.0), self.baseline)

    def rescaled(self, scale: float) -> "HawkesSpec":
        """Parameters of the same process after dividing all times by scale."""
        return HawkesSpec(self.baseline * scale, self.alpha.copy(), self.beta * scale)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "HawkesSpec":
        return cls(np.asarray(blob["baseline"]), np.asarray(blob["alpha"]), np.asarray(blob["beta"]))


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    max_events: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def sample_spec(num_marks: int, rng: np.random.Generator, radius_cap: float = 0.9) -> HawkesSpec:
    """Random spec: alpha in [0.1, 0.5]/K, beta in [0.5, 2], v in [0.1, 0.5],
    resampled until the branching spectral radius is below radius_cap."""
    for _ in range(1000):
        alpha = rng.uniform(0.1, 0.5, size=(num_marks, num_marks)) / num_marks
        beta = rng.uniform(0.5, 2.0, size=(num_marks, num_marks))
        v = rng.uniform(0.1, 0.5, size=num_marks)
        spec = HawkesSpec.__new__(HawkesSpec)
        spec.baseline, spec.alpha, spec.beta = v, alpha, beta
        if spec.branching_radius() < radius_cap:
            return HawkesSpec(v, alpha, beta)
    raise RuntimeError("could not sample a stationary spec")


# ---------------------------------------------------------------------------
# exact intensities and compensators


def intensities(spec: HawkesSpec, times: np.ndarray, marks: np.ndarray, t: float) -> np.ndarray:
    """Per-mark intensity vector at t given the strict history {t_i < t}."""
    lam = spec.baseline.copy()
    past = times < t
    if past.any():
        dt = t - times[past]
        src = marks[past]
        # contributions: alpha[:, src] * beta[:, src] * exp(-beta[:, src] * dt)
        contrib = spec.alpha[:, src] * spec.beta[:, src] * np.exp(-spec.beta[:, src] * dt[None, :])
        lam = lam + contrib.sum(axis=1)
    if spec.inhibitory:
        lam = np.maximum(lam, 0.0)
    return lam


def intensity(spec: HawkesSpec, seq: Sequence, t: float, k: int) -> float:
    """Intensity of mark k at time t, conditioned on events of seq before t."""
    return float(intensities(spec, seq.times, seq.marks, t)[k])


def prefix_intensities(spec: HawkesSpec, seq: Sequence, n_hist: int, t: float) -> np.ndarray:
    """Per-mark intensity at t given exactly the first n_hist events.

    Unlike the strict-history form, an event sitting exactly at t contributes
    its full kernel jump (elapsed clipped at zero): this is the right limit
    needed when integrating over [t_i, t_{i+1}) with the history frozen.
    """
    lam = spec.baseline.copy()
    if n_hist > 0:
        dt = np.clip(t - seq.times[:n_hist], 0.0, None)
        src = seq.marks[:n_hist]
        contrib = spec.alpha[:, src] * spec.beta[:, src] * np.exp(-spec.beta[:, src] * dt[None, :])
        lam = lam + contrib.sum(axis=1)
    if spec.inhibitory:
        lam = np.maximum(lam, 0.0)
    return lam


def ground_intensity(spec: HawkesSpec, seq: Sequence, t: float) -> float:
    return float(intensities(spec, seq.times, seq.marks, t).sum())


def compensator_per_mark(spec: HawkesSpec, seq: Sequence, t: float) -> np.ndarray:
    """Closed-form Lambda_k(t) = v_k t + sum_i alpha[k,k_i] (1 - e^{-beta[k,k_i](t-t_i)})."""
    if spec.inhibitory:
        raise ValueError("no closed-form compensator for a rectified (inhibitory) spec")
    lam = spec.baseline * t
    past = seq.times < t
    if past.any():
        dt = t - seq.times[past]
        src = seq.marks[past]
        lam = lam + (spec.alpha[:, src] * (1.0 - np.exp(-spec.beta[:, src] * dt[None, :]))).sum(axis=1)
    return lam


def ground_compensator(spec: HawkesSpec, seq: Sequence, t: float) -> float:
    return float(compensator_per_mark(spec, seq, t).sum())


def analytic_nll(
    spec: HawkesSpec,
    seq: Sequence,
    horizon: float | None = None,
    skip_first_event: bool = False,
    integrate_from_first: bool = False,
) -> float:
    """Exact negative log-likelihood of seq on [0, horizon].

    skip_first_event / integrate_from_first reproduce the model-side
    first-event policy (no score for the first event, compensator from t_0)
    so learned and true NLLs are comparable per scored event.
    """
    horizon = seq.t_end if horizon is None else horizon
    start = 1 if skip_first_event else 0
    ll = 0.0
    for i in range(start, len(seq)):
        lam_k = intensity(spec, seq, float(seq.times[i]), int(seq.marks[i]))
        if lam_k <= 0.0:
            return float("inf")
        ll += np.log(lam_k)
    comp = ground_compensator(spec, seq, horizon)
    if integrate_from_first and len(seq):
        comp -= ground_compensator(spec, seq, float(seq.times[0]))
    return float(comp - ll)


# ---------------------------------------------------------------------------
# simulation (exact thinning for exponential kernels)


def simulate(spec: HawkesSpec, cfg: SimConfig, rng: np.random.Generator | None = None) -> Sequence:
    """Ogata thinning over [0, horizon].

    Between events every kernel is non-increasing, so the positive part of the
    current intensity is a valid dominating rate until the next event; the
    bound is re-tightened after every proposal.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    k_total = spec.num_marks
    state = np.zeros((k_total, k_total))  # current kernel sums, [target, source]
    jump = spec.alpha * spec.beta
    times: list[float] = []
    marks: list[int] = []
    t = 0.0
    truncated = False
    while True:
        lam_up = float(spec.baseline.sum() + np.maximum(state, 0.0).sum())
        if lam_up <= 0.0:
            t = cfg.horizon
            break
        t_prop = t + rng.exponential(1.0 / lam_up)
        if t_prop >= cfg.horizon:
            break
        state = state * np.exp(-spec.beta * (t_prop - t))
        t = t_prop
        lam = spec.baseline + state.sum(axis=1)
        if spec.inhibitory:
            lam = np.maximum(lam, 0.0)
        total = float(lam.sum())
        if total > 0.0 and rng.uniform() * lam_up <= total:
            k = int(rng.choice(k_total, p=lam / total))
            times.append(t)
            marks.append(k)
            state[:, k] += jump[:, k]
            if len(times) >= cfg.max_events:
                truncated = True
                break
    if not times:
        raise RuntimeError("simulation produced no events; enlarge the horizon")
    t_end = times[-1] if truncated else cfg.horizon
    if truncated:
        warnings.warn(f"simulation truncated at {cfg.max_events} events before the horizon")
    return Sequence(np.array(times), np.array(marks, dtype=np.intp), t_end, truncated=truncated)


def simulate_dataset(
    spec: HawkesSpec, num_sequences: int, cfg: SimConfig
) -> Dataset:
    """Independent sequences with per-sequence child generators of cfg.seed.

    Realizations with no event in the window are valid but useless downstream,
    so they are deterministically replaced by follow-on draws.
    """
    root = np.random.SeedSequence(cfg.seed)
    seqs: list[Sequence] = []
    attempts = 0
    while len(seqs) < num_sequences:
        (child,) = root.spawn(1)
        attempts += 1
        if attempts > 20 * num_sequences:
            raise RuntimeError("too many empty realizations; enlarge the horizon")
        try:
            seqs.append(simulate(spec, cfg, rng=np.random.default_rng(child)))
        except RuntimeError:
            continue
    return Dataset(seqs, num_marks=spec.num_marks, time_scale=1.0)


def rescaled_gaps(spec: HawkesSpec, seq: Sequence) -> np.ndarray:
    """Compensator increments Lambda(t_i) - Lambda(t_{i-1}); Exp(1) under the spec."""
    values = np.array([ground_compensator(spec, seq, float(t)) for t in seq.times])
    return np.diff(np.concatenate([[0.0], values]))


# ---------------------------------------------------------------------------
# generic probe-based thinning sampler (works for any intensity callable)


@dataclass(frozen=True)
class ThinningConfig:
    bound_factor: float = 2.0  # c
    probes: int = 50  # m
    t_max: float = np.inf
    window: float | None = None  # probe window span; default (t_max - t)/8 or 10/lambda
    stall_rejections: int = 10_000  # consecutive rejections before re-probing with 10x m
    max_rejections: int = 1_000_000


def sample_next_event(
    intensity_fn,
    t_start: float,
    rng: np.random.Generator,
    cfg: ThinningConfig = ThinningConfig(),
    mark_fn=None,
):
    """Draw the next event time (and mark) after t_start by thinning.

    intensity_fn(t) -> total intensity; the dominating rate over a probe
    window is bound_factor * max over `probes` uniform probe points, re-probed
    with ten times the probes when acceptance stalls. Returns (t, k) with
    k = None when mark_fn is None, or None if no event occurs before t_max.
    """
    t = float(t_start)
    probes = cfg.probes
    rejections = 0
    underbound_reprobes = 0
    while True:
        if np.isfinite(cfg.t_max) and t >= cfg.t_max:
            return None
        if cfg.window is not None:
            span = cfg.window
        elif np.isfinite(cfg.t_max):
            span = max((cfg.t_max - float(t_start)) / 8.0, 1e-12)
        else:
            lam0 = max(float(intensity_fn(t)), 1e-12)
            span = 10.0 / lam0
        window_end = min(t + span, cfg.t_max)
        grid = np.linspace(t, window_end, probes)
        lam_up = cfg.bound_factor * max(float(np.max([intensity_fn(s) for s in grid])), 0.0)
        if lam_up <= 0.0:
            t = window_end  # dead zone; skip ahead
            if t >= cfg.t_max:
                return None
            continue
        while True:
            t_prop = t + rng.exponential(1.0 / lam_up)
            if t_prop > window_end:
                t = window_end
                break  # re-probe from the window edge
            lam = float(intensity_fn(t_prop))
            if lam > lam_up * (1.0 + 1e-9):
                underbound_reprobes += 1
                if underbound_reprobes > 3:
                    raise ValueError(
                        "upper bound misconfigured: intensity exceeds the probe bound "
                        "(bound_factor too small?)"
                    )
                probes *= 10
                break  # re-probe with more points
            if rng.uniform() * lam_up <= lam:
                k = None
                if mark_fn is not None:
                    p = np.asarray(mark_fn(t_prop), dtype=np.float64)
                    p = p / p.sum()
                    k = int(rng.choice(p.size, p=p))
                return float(t_prop), k
            t = t_prop
            rejections += 1
            if rejections >= cfg.max_rejections:
                raise RuntimeError("upper bound misconfigured: too many consecutive rejections")
            if rejections % cfg.stall_rejections == 0:
                probes *= 10
                break  # acceptance stalling; re-probe with more points

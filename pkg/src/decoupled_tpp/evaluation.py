"""Metrics (NLL, RMSE, ACC), bootstrap uncertainty, and held-out evaluation.

NLL is reported per scored event so corpora with different sequence lengths
stay comparable; RMSE comes in scaled time units (primary) and in the raw
units recovered through the dataset's time scale. Bootstrap resampling is at
the sequence level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def bootstrap(values, resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Seeded bootstrap mean/std of the mean of values (resampled with replacement)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("bootstrap needs at least one value")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    return float(means.mean()), float(means.std())


def bootstrap_ratio(
    numerators, counts, resamples: int = 1000, seed: int = 0, transform=None
) -> tuple[float, float]:
    """Bootstrap of transform(sum(numerators)/sum(counts)) at the group level.

    Used for per-event metrics aggregated over sequences: groups are sequences,
    numerators their metric sums and counts their event counts (transform is
    sqrt for RMSE).
    """
    num = np.asarray(numerators, dtype=np.float64)
    cnt = np.asarray(counts, dtype=np.float64)
    if num.size == 0 or num.shape != cnt.shape:
        raise ValueError("matching non-empty numerators/counts required")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, num.size, size=(resamples, num.size))
    totals = cnt[idx].sum(axis=1)
    totals[totals == 0] = np.nan
    ratios = num[idx].sum(axis=1) / totals
    ratios = ratios[np.isfinite(ratios)]
    if transform is not None:
        ratios = transform(ratios)
    return float(ratios.mean()), float(ratios.std())


def ks_statistic(samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a CDF."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    f = np.asarray(cdf(x), dtype=np.float64)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """Large-sample critical KS distance: sqrt(-ln(alpha/2)/2) / sqrt(n)."""
    return math.sqrt(-math.log(alpha / 2.0) / 2.0) / math.sqrt(n)


def exp1_cdf(x):
    return 1.0 - np.exp(-np.asarray(x, dtype=np.float64))


def hawkes_ground_truth(spec, policy=None):
    """A Hawkes spec wrapped as a conditional process: the model's intensity
    and mark functions stubbed with the closed forms, scored by the same
    likelihood/density plumbing as a learned model."""
    from .hawkes import prefix_intensities
    from .likelihood import ORACLE_POLICY, CallableProcess

    def lam_fn(seq, n_hist, t):
        return float(prefix_intensities(spec, seq, n_hist, t).sum())

    def mark_fn(seq, n_hist, t):
        lam = prefix_intensities(spec, seq, n_hist, t)
        total = lam.sum()
        if total <= 0:
            return np.full(spec.num_marks, 1.0 / spec.num_marks)
        return lam / total

    return CallableProcess(
        spec.num_marks, lam_fn, mark_fn, policy=policy or ORACLE_POLICY
    )


# ---------------------------------------------------------------------------
# prediction and evaluation


def _density_dispatch(process, seq, cuts, cfg, horizon_cfg):
    from .likelihood import density_passes
    from .model import DecoupledModel

    if isinstance(process, DecoupledModel):
        return density_passes(process, seq, cuts, cfg, horizon_cfg)
    return process.density_passes(seq, cuts, cfg, horizon_cfg)


def predict_event(process, seq, cut: int, cfg=None, horizon_cfg=None) -> tuple[float, int]:
    """(t_hat, k_hat) for the event after the first `cut` observed events.

    t_hat is the normalized expected next-event time from the augmented pass;
    k_hat the most probable mark at t_hat. The history must be non-empty.
    """
    from .model import HorizonConfig
    from .solver import SolverConfig

    if cut < 1:
        raise ValueError("prediction needs a non-empty history (cut >= 1)")
    cfg = cfg or SolverConfig("rk4", 64)
    horizon_cfg = horizon_cfg or HorizonConfig()
    res = _density_dispatch(process, seq, [cut], cfg, horizon_cfg)[0]
    return res.expected_time, res.predicted_mark


@dataclass
class EvalReport:
    """Point estimates with bootstrap mean/std for NLL, RMSE, and ACC."""

    metrics: dict  # name -> {"mean": float, "std": float}
    n_sequences: int
    n_scored_events: int
    bootstrap_resamples: int
    seed: int
    time_scale: float
    first_event_policy: str
    config_hash: str | None = None
    checkpoint_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics,
            "n_sequences": self.n_sequences,
            "n_scored_events": self.n_scored_events,
            "bootstrap_resamples": self.bootstrap_resamples,
            "seed": self.seed,
            "time_scale": self.time_scale,
            "first_event_policy": self.first_event_policy,
            "config_hash": self.config_hash,
            "checkpoint_hash": self.checkpoint_hash,
        }


def evaluate(
    process,
    ds,
    nll_cfg=None,
    density_cfg=None,
    horizon_cfg=None,
    resamples: int = 1000,
    seed: int = 0,
    predict: bool = True,
    nll_chunk: int = 32,
) -> EvalReport:
    """Held-out metrics: per-event NLL, RMSE of predicted next-event times
    (scaled units primary, raw units via the dataset time scale), mark
    accuracy; bootstrap mean/std resampled over sequences.

    Predictions are made only at positions with an observed next event and a
    non-empty history (first-event policy of the likelihood module).
    """
    from .likelihood import NllConfig, model_nll
    from .model import DecoupledModel, HorizonConfig
    from .solver import SolverConfig

    if not len(ds.sequences):
        raise ValueError("empty dataset")
    nll_cfg = nll_cfg or NllConfig()
    density_cfg = density_cfg or SolverConfig("rk4", 64)
    horizon_cfg = horizon_cfg or HorizonConfig()

    n = len(ds.sequences)
    ll_sums = np.zeros(n)
    scored = np.zeros(n)
    sq_err = np.zeros(n)
    sq_err_raw = np.zeros(n)
    correct = np.zeros(n)
    n_pred = np.zeros(n)

    if isinstance(process, DecoupledModel):
        for start in range(0, n, nll_chunk):
            chunk = ds.sequences[start : start + nll_chunk]
            for off, lb in enumerate(model_nll(process, chunk, nll_cfg)):
                ll_sums[start + off] = lb.total
                scored[start + off] = lb.n_scored
    else:
        for i, seq in enumerate(ds.sequences):
            lb = process.log_likelihood(seq, nll_cfg)
            ll_sums[i] = lb.total
            scored[i] = lb.n_scored

    if predict:
        for i, seq in enumerate(ds.sequences):
            cuts = list(range(1, len(seq)))
            if not cuts:
                continue
            results = _density_dispatch(process, seq, cuts, density_cfg, horizon_cfg)
            for res in results:
                truth_t = float(seq.times[res.cut])
                truth_k = int(seq.marks[res.cut])
                err = res.expected_time - truth_t
                sq_err[i] += err * err
                sq_err_raw[i] += (err * ds.time_scale) ** 2
                correct[i] += 1.0 if res.predicted_mark == truth_k else 0.0
                n_pred[i] += 1.0

    metrics = {}
    nll_mean, nll_std = bootstrap_ratio(-ll_sums, scored, resamples, seed)
    metrics["nll"] = {"mean": nll_mean, "std": nll_std}
    if predict and n_pred.sum() > 0:
        rmse_mean, rmse_std = bootstrap_ratio(sq_err, n_pred, resamples, seed, transform=np.sqrt)
        rmse_raw_mean, rmse_raw_std = bootstrap_ratio(
            sq_err_raw, n_pred, resamples, seed, transform=np.sqrt
        )
        acc_mean, acc_std = bootstrap_ratio(correct, n_pred, resamples, seed)
        metrics["rmse"] = {"mean": rmse_mean, "std": rmse_std}
        metrics["rmse_unscaled"] = {"mean": rmse_raw_mean, "std": rmse_raw_std}
        metrics["acc"] = {"mean": acc_mean, "std": acc_std}
    policy = getattr(process, "policy", None)
    policy_name = (
        "include_first" if (policy is not None and policy.include_first_event) else "skip_first"
    )
    return EvalReport(
        metrics=metrics,
        n_sequences=n,
        n_scored_events=int(scored.sum()),
        bootstrap_resamples=resamples,
        seed=seed,
        time_scale=ds.time_scale,
        first_event_policy=policy_name,
    )


def empirical_marginal_accuracy(train_ds, test_ds) -> float:
    """Accuracy of always predicting the training corpus's most frequent mark,
    scored at the same positions the model predicts at (events after the first)."""
    counts = np.zeros(train_ds.num_marks)
    for seq in train_ds.sequences:
        for k in seq.marks:
            counts[k] += 1
    top = int(np.argmax(counts))
    hits = total = 0
    for seq in test_ds.sequences:
        hits += int((seq.marks[1:] == top).sum())
        total += max(len(seq) - 1, 0)
    return hits / max(total, 1)

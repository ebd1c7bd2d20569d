"""Mini-batch maximum-likelihood training.

The parallel mode stacks every event row of every sequence in a batch into
one state block and advances all of them in lockstep on their own clocks; the
sequential mode solves each sequence's coupled system interval by interval in
absolute time, which is the traditional scheme the speed benchmark compares
against. Both build the identical objective (their epoch-0 losses agree to
float reordering).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, Sequence
from .likelihood import BatchLoss, batch_loss
from .model import DecoupledModel
from .solver import SolverConfig


class TrainingError(RuntimeError):
    """Non-finite loss or gradients, with the offending sequence identified."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # per-epoch multiplier
    grad_clip: float = 5.0
    seed: int = 0
    mode: str = "parallel"  # {"parallel", "sequential"}
    solver: SolverConfig = SolverConfig("euler", 16)
    patience: int = 10
    use_checkpoint: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in ("parallel", "sequential"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "grad_clip": self.grad_clip,
            "seed": self.seed,
            "mode": self.mode,
            "solver_method": self.solver.method,
            "solver_steps": self.solver.steps_per_interval,
            "patience": self.patience,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "TrainConfig":
        blob = dict(blob)
        method = blob.pop("solver_method", "euler")
        steps = blob.pop("solver_steps", 16)
        known = {k: v for k, v in blob.items() if k in cls.__dataclass_fields__}
        return cls(solver=SolverConfig(method, steps), **known)


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchMasks:
    """sequence_mask marks observed events in the padded grid;
    propagation_mask marks grid columns kept live by the lockstep propagation
    (padding is realized as zero-length segments, so live-but-padded columns
    contribute nothing). The propagation mask always covers the observed region."""

    sequence_mask: np.ndarray  # (B, L) bool
    propagation_mask: np.ndarray  # (B, L) bool


@dataclass
class Batch:
    sequences: list[Sequence]
    times: np.ndarray  # (B, L), padded slots repeat each sequence's t_end
    marks: np.ndarray  # (B, L), padded slots are 0
    t_end: np.ndarray  # (B,)
    masks: BatchMasks

    def __len__(self) -> int:
        return len(self.sequences)


def pad_batch(sequences: list[Sequence]) -> Batch:
    b = len(sequences)
    length = max(len(s) for s in sequences)
    times = np.zeros((b, length))
    marks = np.zeros((b, length), dtype=np.intp)
    seq_mask = np.zeros((b, length), dtype=bool)
    t_end = np.zeros(b)
    for i, s in enumerate(sequences):
        n = len(s)
        times[i, :n] = s.times
        times[i, n:] = s.t_end
        marks[i, :n] = s.marks
        seq_mask[i, :n] = True
        t_end[i] = s.t_end
    prop_mask = np.ones((b, length), dtype=bool)
    return Batch(
        sequences=list(sequences),
        times=times,
        marks=marks,
        t_end=t_end,
        masks=BatchMasks(sequence_mask=seq_mask, propagation_mask=prop_mask),
    )


def batch_to_sequences(batch: Batch) -> list[Sequence]:
    """Rebuild sequences from the padded arrays through the sequence mask, so
    anything written into padded slots cannot reach the loss."""
    out = []
    for i in range(len(batch)):
        keep = batch.masks.sequence_mask[i]
        out.append(
            Sequence(batch.times[i, keep], batch.marks[i, keep], float(batch.t_end[i]))
        )
    return out


def make_batches(ds: Dataset, cfg: TrainConfig, shuffle: bool = True, epoch: int = 0) -> list[Batch]:
    """Seeded shuffling, padding to the longest sequence per batch."""
    order = np.arange(len(ds.sequences))
    if shuffle:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = rng.permutation(order)
    batches = []
    for start in range(0, order.size, cfg.batch_size):
        chunk = [ds.sequences[i] for i in order[start : start + cfg.batch_size]]
        batches.append(pad_batch(chunk))
    return batches


# ---------------------------------------------------------------------------
# optimizer (adaptive moment estimation with global-norm clipping)


@dataclass
class Adam:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[ad.Var], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
        if not np.isfinite(norm):
            raise TrainingError("non-finite gradient norm")
        scale = 1.0
        if self.grad_clip > 0 and norm > self.grad_clip:
            scale = self.grad_clip / norm
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g * scale
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p.value[...] -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# epochs


@dataclass
class EpochStats:
    nll_per_event: float
    nll_lambda: float  # per-event
    nll_mark: float  # per-event
    wall_time: float
    sec_per_iter: float
    n_clamped: int
    iterations: int


def _assert_finite(bl: BatchLoss, batch: Batch) -> None:
    total = bl.logl_lambda + bl.logl_mark
    if np.isfinite(total).all() and np.isfinite(float(bl.loss.value)):
        return
    bad = int(np.flatnonzero(~np.isfinite(total))[0]) if not np.isfinite(total).all() else 0
    term = "lambda" if not np.isfinite(bl.logl_lambda[bad]) else "mark"
    raise TrainingError(
        f"non-finite loss (sequence {bad} of the batch, {term} term); aborting epoch"
    )


def train_epoch(
    model: DecoupledModel, batches: list[Batch], cfg: TrainConfig, opt: Adam
) -> EpochStats:
    params = model.parameters()
    t0 = time.perf_counter()
    tot_ll_lam = tot_ll_mark = 0.0
    tot_scored = 0
    tot_clamped = 0
    for batch in batches:
        bl = batch_loss(
            model,
            batch_to_sequences(batch),
            cfg.solver,
            mode=cfg.mode,
            use_checkpoint=cfg.use_checkpoint,
        )
        _assert_finite(bl, batch)
        scored = max(int(bl.n_scored.sum()), 1)
        loss = bl.loss / scored
        loss.backward()
        grads = ad.collect_grads(params)
        opt.step(params, grads)
        tot_ll_lam += float(bl.logl_lambda.sum())
        tot_ll_mark += float(bl.logl_mark.sum())
        tot_scored += int(bl.n_scored.sum())
        tot_clamped += bl.n_clamped
    wall = time.perf_counter() - t0
    scored = max(tot_scored, 1)
    return EpochStats(
        nll_per_event=-(tot_ll_lam + tot_ll_mark) / scored,
        nll_lambda=-tot_ll_lam / scored,
        nll_mark=-tot_ll_mark / scored,
        wall_time=wall,
        sec_per_iter=wall / max(len(batches), 1),
        n_clamped=tot_clamped,
        iterations=len(batches),
    )


def dataset_nll(model: DecoupledModel, ds: Dataset, cfg: TrainConfig) -> float:
    """Per-event NLL at training resolution (used for early stopping)."""
    total, scored = 0.0, 0
    with ad.no_grad():
        for batch in make_batches(ds, cfg, shuffle=False):
            bl = batch_loss(
                model, batch_to_sequences(batch), cfg.solver, mode=cfg.mode, use_checkpoint=False
            )
            total += float(bl.logl_lambda.sum() + bl.logl_mark.sum())
            scored += int(bl.n_scored.sum())
    return -total / max(scored, 1)


@dataclass
class FitResult:
    history: list[dict]
    best_epoch: int
    best_val_nll: float


def fit(
    model: DecoupledModel,
    train: Dataset,
    val: Dataset | None,
    cfg: TrainConfig,
    log_rows: list[dict] | None = None,
    verbose: bool = False,
) -> FitResult:
    """Epoch loop with early stopping on validation NLL (patience epochs);
    the best-validation parameters are restored at the end."""
    opt = Adam(learning_rate=cfg.learning_rate, grad_clip=cfg.grad_clip)
    params = model.parameters()
    best = (np.inf, -1, None)  # val nll, epoch, snapshot
    history: list[dict] = []
    since_best = 0
    for epoch in range(cfg.epochs):
        opt.learning_rate = cfg.learning_rate * cfg.lr_decay**epoch
        stats = train_epoch(model, make_batches(ds=train, cfg=cfg, epoch=epoch), cfg, opt)
        row = {
            "epoch": epoch,
            "split": "train",
            "nll": stats.nll_per_event,
            "nll_lambda": stats.nll_lambda,
            "nll_mark": stats.nll_mark,
            "sec_per_iter": stats.sec_per_iter,
        }
        history.append(row)
        if log_rows is not None:
            log_rows.append(row)
        if verbose:
            print(
                f"epoch {epoch}: train nll/event {stats.nll_per_event:.4f} "
                f"({stats.sec_per_iter:.3f} s/iter)",
                flush=True,
            )
        if val is not None and len(val.sequences):
            val_nll = dataset_nll(model, val, cfg)
            vrow = {
                "epoch": epoch,
                "split": "val",
                "nll": val_nll,
                "nll_lambda": float("nan"),
                "nll_mark": float("nan"),
                "sec_per_iter": 0.0,
            }
            history.append(vrow)
            if log_rows is not None:
                log_rows.append(vrow)
            if verbose:
                print(f"epoch {epoch}: val nll/event {val_nll:.4f}", flush=True)
            if val_nll < best[0] - 1e-12:
                best = (val_nll, epoch, [p.value.copy() for p in params])
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
    if best[2] is not None:
        for p, snap in zip(params, best[2]):
            p.value[...] = snap
    return FitResult(history=history, best_epoch=best[1], best_val_nll=float(best[0]))


# ---------------------------------------------------------------------------
# benchmarks


def benchmark_modes(
    model: DecoupledModel, ds: Dataset, cfg: TrainConfig, iterations: int = 20
) -> dict:
    """Mean wall time per full training iteration (loss, backward, optimizer
    step), parallel vs sequential.

    Modes run interleaved over the same batch cycle so background load drift
    hits both equally; each keeps its own parameter/optimizer state seeded
    from the same snapshot, and one warm-up iteration per mode stays off the
    clock.
    """
    params = model.parameters()
    snapshot = [p.value.copy() for p in params]
    batches = make_batches(ds, cfg, shuffle=False)
    modes = ("parallel", "sequential")
    states = {
        mode: {
            "values": [s.copy() for s in snapshot],
            "opt": Adam(learning_rate=cfg.learning_rate, grad_clip=cfg.grad_clip),
            "cfg": replace(cfg, mode=mode),
            "total": 0.0,
        }
        for mode in modes
    }
    for i in range(iterations + 1):  # iteration 0 is the warm-up
        batch = [batches[i % len(batches)]]
        for mode in modes:
            st = states[mode]
            for p, v in zip(params, st["values"]):
                p.value[...] = v
            t0 = time.perf_counter()
            train_epoch(model, batch, st["cfg"], st["opt"])
            elapsed = time.perf_counter() - t0
            for v, p in zip(st["values"], params):
                v[...] = p.value
            if i > 0:
                st["total"] += elapsed
    for p, snap in zip(params, snapshot):
        p.value[...] = snap
    out = {mode: states[mode]["total"] / iterations for mode in modes}
    out["ratio"] = out["parallel"] / out["sequential"]
    return out


def benchmark_kernels(
    model: DecoupledModel, ds: Dataset, cfg: TrainConfig, iterations: int = 20
) -> list[dict]:
    """Per-iteration training time for each available kernel backend."""
    from . import kernels

    rows = []
    for name in kernels.available_backends():
        with kernels.backend(name):
            timing = benchmark_modes(model, ds, cfg, iterations)
        rows.append(
            {
                "kernels": name,
                "parallel_sec_per_iter": timing["parallel"],
                "sequential_sec_per_iter": timing["sequential"],
                "ratio": timing["ratio"],
            }
        )
    return rows

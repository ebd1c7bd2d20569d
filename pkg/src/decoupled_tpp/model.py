"""The decoupled event-influence model.

Every observed event (t_i, k_i) owns a hidden state h(t; e_i) started at the
k_i-th embedding row and propagated forward from t_i by a learned ODE field.
Two decoders read each trajectory: a scalar influence mu(t; e_i) feeding the
ground intensity and a K-vector feeding the mark distribution. Histories are
combined either linearly (sum of softplus(mu_i), softmax of summed mark
contributions) or nonlinearly (softplus of summed mu_i, which admits
inhibition).

Propagation runs all rows in lockstep on their own clocks: at lockstep k a
row born at event j covers the absolute interval [t_{j+k}, t_{j+k+1}], every
interval rescaled to the same number of solver steps, so one stacked state
block advances the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Sequence
from .nets import Embedding, Mlp
from .solver import SolverConfig, integrate_interval


@dataclass(frozen=True)
class ModelConfig:
    num_marks: int
    hidden_dim: int = 64
    width: int = 256
    depth: int = 3  # weight layers per net
    combiner: str = "linear"  # {"linear", "nonlinear"}
    activation: str = "tanh"
    embed_scale: float = 0.1

    def __post_init__(self):
        if self.combiner not in ("linear", "nonlinear"):
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if self.num_marks < 1 or self.hidden_dim < 1 or self.depth < 1:
            raise ValueError("num_marks, hidden_dim and depth must be positive")

    def to_dict(self) -> dict:
        return {
            "num_marks": self.num_marks,
            "hidden_dim": self.hidden_dim,
            "width": self.width,
            "depth": self.depth,
            "combiner": self.combiner,
            "activation": self.activation,
            "embed_scale": self.embed_scale,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ModelConfig":
        return cls(**blob)


@dataclass(frozen=True)
class HorizonConfig:
    """Propagation past the last event.

    Trajectory export stops once every decoded influence has converged below
    mu_tolerance, else after max_gap_multiples mean gaps. Density passes stop
    at density_target probability mass; their extension segments start one
    mean gap long and grow geometrically (extension_growth per segment, each
    at most max_segment_gap_multiples mean gaps) so small intensity plateaus
    still reach the target within max_density_segments."""

    mu_tolerance: float = 1e-4
    max_gap_multiples: float = 10.0
    density_target: float = 0.999  # F level that ends a density pass
    max_density_segments: int = 60
    extension_growth: float = 1.25
    max_segment_gap_multiples: float = 50.0


class DecoupledModel:
    """Embedding + dynamics field + influence/mark decoders."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d, k, w = config.hidden_dim, config.num_marks, config.width
        hidden = [w] * (config.depth - 1)
        self.embedding = Embedding.create(k, d, rng, scale=config.embed_scale, name="embedding")
        self.gamma = Mlp.create([d + 1 + k] + hidden + [d], rng, config.activation, name="gamma")
        self.mu_decoder = Mlp.create([d] + hidden + [1], rng, config.activation, name="g_mu")
        self.mark_decoder = Mlp.create([d] + hidden + [k], rng, config.activation, name="g_f")

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[ad.Var]:
        return (
            self.embedding.parameters()
            + self.gamma.parameters()
            + self.mu_decoder.parameters()
            + self.mark_decoder.parameters()
        )

    # -- building blocks ----------------------------------------------------

    def init_hidden(self, marks) -> ad.Var:
        """Initial per-event states W_e(k); independent of event times."""
        return self.embedding(marks)

    def onehot(self, marks: np.ndarray) -> np.ndarray:
        eye = np.eye(self.config.num_marks)
        return eye[np.asarray(marks, dtype=np.intp)]

    def field(self, h, elapsed, onehot):
        """dh/dt for taped states: gamma(h, elapsed-since-own-event, mark one-hot)."""
        x = ad.concat_cols([h, ad.constant(elapsed), ad.constant(onehot)])
        return self.gamma(x)

    def field_raw(self, h: np.ndarray, elapsed: np.ndarray, onehot: np.ndarray) -> np.ndarray:
        return self.gamma.apply_raw(np.concatenate([h, elapsed, onehot], axis=1))

    def decode_mu_raw(self, h: np.ndarray) -> np.ndarray:
        return self.mu_decoder.apply_raw(h)[:, 0]

    def decode_marks_raw(self, h: np.ndarray) -> np.ndarray:
        return self.mark_decoder.apply_raw(h)

    # -- combinators ---------------------------------------------------------

    def ground_intensity(self, mu_values) -> float:
        return ground_intensity(mu_values, self.config.combiner)

    def mark_probability(self, fhat_values) -> np.ndarray:
        return mark_probability(fhat_values, self.config.num_marks)

    # -- propagation ---------------------------------------------------------

    def propagate(
        self,
        seq: Sequence,
        cfg: SolverConfig,
        horizon: float | None = None,
        horizon_cfg: HorizonConfig = HorizonConfig(),
    ) -> list["Trajectory"]:
        return propagate(self, seq, cfg, horizon=horizon, horizon_cfg=horizon_cfg)


# ---------------------------------------------------------------------------
# combinators (module-level so stubs and tests can use them directly)


def ground_intensity(mu_values, combiner: str) -> float:
    """Combine per-event influences into the ground intensity at one time.

    linear: sum of softplus(mu_i), 0 over an empty history.
    nonlinear: softplus(sum of mu_i); an empty history gives softplus(0).
    """
    from . import kernels

    mu = np.asarray(mu_values, dtype=np.float64).ravel()
    if combiner == "linear":
        if mu.size == 0:
            return 0.0
        return float(kernels.softplus(mu).sum())
    if combiner == "nonlinear":
        return float(kernels.softplus(np.array([mu.sum()]))[0])
    raise ValueError(f"unknown combiner {combiner!r}")


def mark_probability(fhat_values, num_marks: int) -> np.ndarray:
    """Softmax of coordinate-wise summed mark contributions; uniform when empty."""
    fhat = np.asarray(fhat_values, dtype=np.float64).reshape(-1, num_marks)
    if fhat.shape[0] == 0:
        return np.full(num_marks, 1.0 / num_marks)
    logits = fhat.sum(axis=0)
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


# ---------------------------------------------------------------------------
# lockstep staircase schedule


@dataclass
class Staircase:
    """Per-row segment schedule for a batch of sequences.

    Row r is event row_event[r] of batch sequence row_seq[r]. Its lockstep
    segment k spans the absolute node interval [node_{j+k}, node_{j+k+1}] of
    its sequence (events, then t_end, then any extension nodes); seg_len is 0
    once the row runs out of nodes, which freezes it exactly.
    """

    row_seq: np.ndarray  # (R,)
    row_event: np.ndarray  # (R,)
    row_t0: np.ndarray  # (R,)
    row_mark: np.ndarray  # (R,)
    seg_len: np.ndarray  # (R, S)
    elapsed0: np.ndarray  # (R, S) row clock at segment start
    num_sequences: int
    seq_lengths: np.ndarray  # (B,) event counts
    nodes: list[np.ndarray]  # per-sequence absolute node times (events + t_end + ext)

    @property
    def num_rows(self) -> int:
        return self.row_seq.size

    @property
    def num_segments(self) -> int:
        return self.seg_len.shape[1]


def build_staircase(sequences: list[Sequence], extension_nodes: list[np.ndarray] | None = None) -> Staircase:
    """Schedule rows of all sequences onto a common lockstep segment axis."""
    row_seq, row_event, row_t0, row_mark = [], [], [], []
    nodes_per_seq = []
    for s, seq in enumerate(sequences):
        if len(seq) == 0:
            raise ValueError(f"sequence {s} is empty")
        nodes = list(seq.times)
        if seq.t_end > seq.times[-1]:
            nodes.append(seq.t_end)
        if extension_nodes is not None and len(extension_nodes[s]):
            nodes.extend(extension_nodes[s])
        nodes = np.asarray(nodes, dtype=np.float64)
        if np.any(np.diff(nodes) <= 0):
            raise ValueError(f"sequence {s} has non-increasing node times")
        nodes_per_seq.append(nodes)
        for j in range(len(seq)):
            row_seq.append(s)
            row_event.append(j)
            row_t0.append(seq.times[j])
            row_mark.append(seq.marks[j])
    row_seq = np.asarray(row_seq, dtype=np.intp)
    row_event = np.asarray(row_event, dtype=np.intp)
    row_t0 = np.asarray(row_t0, dtype=np.float64)
    row_mark = np.asarray(row_mark, dtype=np.intp)
    n_rows = row_seq.size
    n_segments = max(len(nodes_per_seq[s]) - 1 - j for s, j in zip(row_seq, row_event))
    n_segments = max(n_segments, 1)
    seg_len = np.zeros((n_rows, n_segments))
    elapsed0 = np.zeros((n_rows, n_segments))
    for r in range(n_rows):
        nodes = nodes_per_seq[row_seq[r]]
        j = row_event[r]
        own = nodes[j:]  # row's node ladder starting at its birth
        gaps = np.diff(own)
        seg_len[r, : gaps.size] = gaps
        cum = np.concatenate([[0.0], np.cumsum(gaps)])
        elapsed0[r, : gaps.size] = cum[:-1]
        elapsed0[r, gaps.size :] = cum[-1]
    return Staircase(
        row_seq=row_seq,
        row_event=row_event,
        row_t0=row_t0,
        row_mark=row_mark,
        seg_len=seg_len,
        elapsed0=elapsed0,
        num_sequences=len(sequences),
        seq_lengths=np.asarray([len(s) for s in sequences], dtype=np.intp),
        nodes=nodes_per_seq,
    )


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """One event's propagated influence, sampled on its sub-step grid."""

    seq_id: int
    event_index: int
    mark: int
    times: np.ndarray  # (G,) absolute times, starting at the event time
    hidden: np.ndarray  # (G, d)
    mu: np.ndarray  # (G,)
    fhat: np.ndarray  # (G, K)


def propagate(
    model: DecoupledModel,
    seq: Sequence,
    cfg: SolverConfig,
    horizon: float | None = None,
    horizon_cfg: HorizonConfig = HorizonConfig(),
    seq_id: int = 0,
) -> list[Trajectory]:
    """Solve every event's hidden trajectory of one sequence in lockstep.

    Covers the observed window, then extension segments one mean gap long
    until the largest softplus(mu) converges below horizon_cfg.mu_tolerance
    (or `horizon` / the gap-multiple cap is reached).
    """
    from . import kernels

    if len(seq) == 0:
        return []
    stair = build_staircase([seq])
    onehot = model.onehot(stair.row_mark)
    h = model.embedding.rows_raw(stair.row_mark)
    mean_gap = float(np.mean(seq.gaps)) if len(seq) > 1 else max(seq.t_end - seq.times[0], 1.0)
    if mean_gap <= 0:
        mean_gap = 1.0

    times_per_row = [[stair.row_t0[r]] for r in range(stair.num_rows)]
    states_per_row = [[h[r]] for r in range(stair.num_rows)]

    def advance(h, seg_len, elapsed_start):
        live = seg_len[:, 0] > 0

        def f(t, y):
            return model.field_raw(y, np.asarray(t, dtype=np.float64).reshape(-1, 1), onehot)

        _, nodes = integrate_interval(
            f, h, elapsed_start[:, None], (elapsed_start + seg_len[:, 0])[:, None], cfg, record=True
        )
        for r in np.flatnonzero(live):
            t0 = times_per_row[r][-1]
            dt = seg_len[r, 0] / cfg.steps_per_interval
            for m in range(1, cfg.steps_per_interval + 1):
                times_per_row[r].append(t0 + m * dt)
                states_per_row[r].append(nodes[m][r])
        return nodes[-1]

    for k in range(stair.num_segments):
        h = advance(h, stair.seg_len[:, k : k + 1], stair.elapsed0[:, k])

    # extension past the observed window
    t_cursor = max(seq.t_end, float(seq.times[-1]))
    cap = (
        horizon
        if horizon is not None
        else t_cursor + horizon_cfg.max_gap_multiples * mean_gap
    )
    while t_cursor < cap - 1e-12:
        mu_now = model.decode_mu_raw(h)
        if horizon is None and kernels.softplus(mu_now).max() < horizon_cfg.mu_tolerance:
            break
        step_len = min(mean_gap, cap - t_cursor)
        seg = np.full((stair.num_rows, 1), step_len)
        elapsed = np.array([times_per_row[r][-1] - stair.row_t0[r] for r in range(stair.num_rows)])
        h = advance(h, seg, elapsed)
        t_cursor += step_len

    out = []
    for r in range(stair.num_rows):
        times = np.asarray(times_per_row[r])
        states = np.asarray(states_per_row[r])
        keep = np.concatenate([[True], np.diff(times) > 0])  # frozen rows repeat nodes
        times, states = times[keep], states[keep]
        out.append(
            Trajectory(
                seq_id=seq_id,
                event_index=int(stair.row_event[r]),
                mark=int(stair.row_mark[r]),
                times=times,
                hidden=states,
                mu=model.decode_mu_raw(states),
                fhat=model.decode_marks_raw(states),
            )
        )
    return out


# ---------------------------------------------------------------------------
# interpretability export


def influence_table(
    model: DecoupledModel,
    seq: Sequence,
    cfg: SolverConfig,
    seq_id: int = 0,
    horizon: float | None = None,
    window: tuple[float, float] | None = None,
) -> list[tuple]:
    """CSV-ready rows (seq_id, event_idx, mark, t, mu, fhat_0..fhat_{K-1}).

    window, when given, keeps only grid points with window[0] <= t < window[1];
    trajectories exist only from their own event onward, so a window entirely
    before the first event yields no rows.
    """
    rows = []
    for traj in propagate(model, seq, cfg, horizon=horizon, seq_id=seq_id):
        for g in range(traj.times.size):
            t = float(traj.times[g])
            if window is not None and not (window[0] <= t < window[1]):
                continue
            rows.append(
                (traj.seq_id, traj.event_index, traj.mark, t, float(traj.mu[g]))
                + tuple(float(v) for v in traj.fhat[g])
            )
    return rows


def influence_shares(
    model: DecoupledModel, sequences: list[Sequence], cfg: SolverConfig
) -> np.ndarray:
    """(K, K) matrix: average share of intensity at events of target mark b
    contributed by history events of source mark a; columns sum to 1 per target."""
    from . import kernels

    k_total = model.config.num_marks
    sums = np.zeros((k_total, k_total))  # [source, target]
    counts = np.zeros(k_total)
    steps = cfg.steps_per_interval
    for seq in sequences:
        trajs = propagate(model, seq, cfg, horizon=float(seq.times[-1]))
        for i in range(1, len(seq)):
            contribs = np.zeros(k_total)
            for j in range(i):
                node = (i - j) * steps  # event i sits on row j's sub-grid
                mu_ji = trajs[j].mu[node] if node < trajs[j].mu.size else trajs[j].mu[-1]
                contribs[trajs[j].mark] += float(kernels.softplus(np.array([mu_ji]))[0])
            total = contribs.sum()
            if total > 0:
                target = int(seq.marks[i])
                sums[:, target] += contribs / total
                counts[target] += 1
    counts[counts == 0] = 1.0
    return sums / counts

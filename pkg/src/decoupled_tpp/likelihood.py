"""Exact log-likelihood of event sequences and its integral machinery.

Three routes into the same quantities:

* a taped loss graph for training: per-event hidden rows advance in lockstep
  segments (own-clock staircase in parallel mode, absolute-time intervals in
  sequential mode); event log-intensities and mark log-probabilities come from
  boundary states, and the compensator from solver-matched quadrature over the
  decoded influence values at every sub-step (left rule for Euler, composite
  trapezoid for RK4);
* an untaped augmented co-integration that advances hidden rows together with
  the compensator, the next-event CDF, and the running expected time in one
  solver pass (evaluation, prediction, goodness-of-fit);
* the closed decomposition of the linear combinator: each event's softplus
  influence integrated on its own clock from its own time, then summed. This
  is only an identity for the linear combinator and raises otherwise.

The engines accept the neural model or any process exposing closed-form
conditional intensities (see CallableProcess), which is how ground-truth
oracles are scored by the very same plumbing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .data import Sequence
from .model import DecoupledModel, HorizonConfig, Staircase, build_staircase
from .solver import SolverConfig, step_euler, step_rk4

LOG_CLAMP = -30.0  # per-event floor for ln lambda
_FLOOR = float(np.exp(LOG_CLAMP))


@dataclass
class LossBreakdown:
    """Eq.-style split of one sequence's log-likelihood."""

    logl_lambda: float
    logl_mark: float
    n_scored: int
    n_clamped: int = 0

    @property
    def total(self) -> float:
        return self.logl_lambda + self.logl_mark


@dataclass(frozen=True)
class LikelihoodPolicy:
    """How the first event is scored.

    The learned model has no immigrant rate: its intensity before the first
    event is identically zero (linear combinator), so the first event cannot
    be scored and integration starts at t_0. Closed-form oracles with a
    baseline default to the full likelihood on [0, t_end].
    """

    include_first_event: bool = False
    integrate_from_zero: bool = False


MODEL_POLICY = LikelihoodPolicy(include_first_event=False, integrate_from_zero=False)
ORACLE_POLICY = LikelihoodPolicy(include_first_event=True, integrate_from_zero=True)


# ---------------------------------------------------------------------------
# taped loss graph


@dataclass
class BatchLoss:
    loss: ad.Var  # scalar: negative log-likelihood summed over the batch
    logl_lambda: np.ndarray  # (B,)
    logl_mark: np.ndarray  # (B,)
    n_scored: np.ndarray  # (B,)
    n_events: np.ndarray  # (B,)
    n_clamped: int

    @property
    def per_event_nll(self) -> float:
        scored = self.n_scored.sum()
        if scored == 0:
            return 0.0
        return float(-(self.logl_lambda.sum() + self.logl_mark.sum()) / scored)


def _parallel_schedule(sequences: list[Sequence]) -> Staircase:
    return build_staircase(sequences)


def _sequential_schedule(seq: Sequence) -> Staircase:
    """Absolute-time schedule: one shared segment per inter-node interval,
    rows frozen (zero length) until their own event is reached."""
    stair = build_staircase([seq])
    nodes = stair.nodes[0]
    n_seg = nodes.size - 1
    n_rows = stair.num_rows
    seg_len = np.zeros((n_rows, max(n_seg, 1)))
    elapsed0 = np.zeros((n_rows, max(n_seg, 1)))
    gaps = np.diff(nodes)
    for r in range(n_rows):
        j = stair.row_event[r]
        seg_len[r, j:n_seg] = gaps[j:]
        elapsed0[r, j:n_seg] = nodes[j:-1] - stair.row_t0[r]
        if n_seg > 0:
            elapsed0[r, n_seg:] = nodes[-1] - stair.row_t0[r]
    stair.seg_len = seg_len
    stair.elapsed0 = elapsed0
    return stair


def _pair_maps(stair: Staircase, mode: str):
    """Map (history row j, scored event i) pairs onto the boundary stack.

    Returns gather indices into the stacked per-segment boundary states,
    scored-event ids, per-event sequence/mark arrays.
    """
    n_rows = stair.num_rows
    gather, pair_event = [], []
    event_seq, event_mark, event_pos = [], [], []
    event_id = {}
    row_of = {}
    for r in range(n_rows):
        row_of[(stair.row_seq[r], stair.row_event[r])] = r
    for s in range(stair.num_sequences):
        n = int(stair.seq_lengths[s])
        for i in range(1, n):
            event_id[(s, i)] = len(event_seq)
            event_seq.append(s)
            event_pos.append(i)
    marks_by_seq = {}
    for r in range(n_rows):
        marks_by_seq[(stair.row_seq[r], stair.row_event[r])] = stair.row_mark[r]
    for (s, i), e in event_id.items():
        event_mark.append(marks_by_seq[(s, i)])
        for j in range(i):
            r = row_of[(s, j)]
            k = (i - j - 1) if mode == "parallel" else (i - 1)
            gather.append(k * n_rows + r)
            pair_event.append(e)
    return (
        np.asarray(gather, dtype=np.intp),
        np.asarray(pair_event, dtype=np.intp),
        np.asarray(event_seq, dtype=np.intp),
        np.asarray(event_mark, dtype=np.intp),
        np.asarray(event_pos, dtype=np.intp),
    )


def _segment_fn(model: DecoupledModel, onehot, elapsed0, dt, cfg: SolverConfig):
    """One lockstep segment: advance hidden rows, recording the decoded
    influence at every sub-step start. Output columns: [h | mu_0..mu_{n-1}]."""
    n_gw = len(model.gamma.weights)
    n_mw = len(model.mu_decoder.weights)
    act = model.config.activation
    steps = cfg.steps_per_interval
    stepper = step_euler if cfg.method == "euler" else step_rk4

    def seg(h, *params):
        g_w = params[:n_gw]
        g_b = params[n_gw : 2 * n_gw]
        m_w = params[2 * n_gw : 2 * n_gw + n_mw]
        m_b = params[2 * n_gw + n_mw :]

        def fieldfn(t, y):
            x = ad.concat_cols([y, ad.constant(t), ad.constant(onehot)])
            return ad.mlp(x, g_w, g_b, act)

        mu_cols = []
        for m in range(steps):
            mu_cols.append(ad.mlp(h, m_w, m_b, act))
            h = stepper(fieldfn, h, elapsed0 + m * dt, dt)
        return ad.concat_cols([h] + mu_cols)

    return seg


def _loss_from_schedule(
    model: DecoupledModel,
    stair: Staircase,
    mode: str,
    cfg: SolverConfig,
    use_checkpoint: bool,
):
    """The taped batch objective over a lockstep schedule.

    Rows are sorted so every segment's live rows form a leading prefix (rows
    drop off as their ladders end in parallel mode; join as they are born in
    sequential mode), and each segment advances only that prefix: padded
    positions cost nothing and cannot touch the loss. Event log-intensities
    and mark terms come from gathered boundary states; the compensator from
    solver-matched quadrature over the per-step influence records (left rule
    for Euler; composite trapezoid for RK4, closing each row at its own final
    boundary).
    """
    combiner = model.config.combiner
    if combiner == "nonlinear" and cfg.method != "euler":
        raise ValueError(
            "nonlinear-combinator training requires the euler solver "
            "(the cross-event compensator quadrature is left-rule)"
        )
    steps = cfg.steps_per_interval
    d = model.config.hidden_dim
    n_rows, n_seg = stair.seg_len.shape
    n_seqs = stair.num_sequences

    # sort rows by live-segment count so live sets are prefixes
    live = stair.seg_len > 0
    order = np.argsort(-live.sum(axis=1), kind="stable")
    inverse = np.empty(n_rows, dtype=np.intp)
    inverse[order] = np.arange(n_rows)
    seg_len = stair.seg_len[order]
    elapsed0 = stair.elapsed0[order]
    row_seq = stair.row_seq[order]
    row_event = stair.row_event[order]
    row_mark = stair.row_mark[order]
    live_counts = (seg_len > 0).sum(axis=1)
    m_sizes = (seg_len > 0).sum(axis=0)  # live rows per segment
    dt_all = seg_len / steps
    onehot = model.onehot(row_mark)

    params = (
        list(model.gamma.weights)
        + list(model.gamma.biases)
        + list(model.mu_decoder.weights)
        + list(model.mu_decoder.biases)
    )
    h = model.embedding(row_mark)
    boundaries, mu_blocks = [], []
    offsets = np.zeros(n_seg + 1, dtype=np.intp)
    for k in range(n_seg):
        m_k = int(m_sizes[k])
        offsets[k + 1] = offsets[k] + m_k
        if m_k == 0:
            boundaries.append(None)
            mu_blocks.append(None)
            continue
        seg = _segment_fn(
            model, onehot[:m_k], elapsed0[:m_k, k : k + 1], dt_all[:m_k, k : k + 1], cfg
        )
        h_live = ad.slice_rows(h, 0, m_k) if m_k < n_rows else h
        if use_checkpoint:
            packed = ad.checkpoint(seg, h_live, *params)
        else:
            packed = seg(h_live, *params)
        h_new = ad.slice_cols(packed, 0, d)
        mu_blocks.append(ad.slice_cols(packed, d, d + steps))
        boundaries.append(h_new)
        h = h_new if m_k == n_rows else ad.concat_rows([h_new, ad.slice_rows(h, m_k, n_rows)])

    stacked = ad.concat_rows([b for b in boundaries if b is not None]) if offsets[-1] else None

    # (history row, scored event) pairs into the packed boundary stack
    gather, pair_event = [], []
    event_seq, event_mark = [], []
    pos_of = {}
    for p in range(n_rows):
        pos_of[(int(row_seq[p]), int(row_event[p]))] = p
    for s in range(n_seqs):
        for i in range(1, int(stair.seq_lengths[s])):
            e = len(event_seq)
            event_seq.append(s)
            event_mark.append(int(row_mark[pos_of[(s, i)]]))
            for j in range(i):
                p = pos_of[(s, j)]
                k = (i - j - 1) if mode == "parallel" else (i - 1)
                gather.append(int(offsets[k]) + p)
                pair_event.append(e)
    gather = np.asarray(gather, dtype=np.intp)
    pair_event = np.asarray(pair_event, dtype=np.intp)
    event_seq = np.asarray(event_seq, dtype=np.intp)
    event_mark = np.asarray(event_mark, dtype=np.intp)
    n_events = int(pair_event.max() + 1) if pair_event.size else 0

    logl_mark_seq = ad.constant(np.zeros(n_seqs))
    n_clamped = 0
    if n_events:
        hist = ad.gather_rows(stacked, gather)
        mu_pairs = model.mu_decoder(hist)
        fhat_pairs = model.mark_decoder(hist)
        if combiner == "linear":
            lam_events = ad.segment_sum(ad.softplus(mu_pairs), pair_event, n_events)
        else:
            lam_events = ad.softplus(ad.segment_sum(mu_pairs, pair_event, n_events))
        n_clamped = int((lam_events.value <= _FLOOR).sum())
        log_lam = ad.log(ad.maximum(lam_events, _FLOOR))
        logl_lambda_events = ad.sum_axis(ad.segment_sum(log_lam, event_seq, n_seqs), axis=1)
        logits = ad.segment_sum(fhat_pairs, pair_event, n_events)
        logp = ad.take_per_row(ad.log_softmax(logits), event_mark)
        logl_mark_seq = ad.segment_sum(logp, event_seq, n_seqs)
    else:
        logl_lambda_events = ad.constant(np.zeros(n_seqs))

    # compensator over [t_0, t_end] per sequence, from the per-step records
    w_body = dt_all  # weight of steps m >= 1 (and m = 0 under the left rule)
    if cfg.method == "rk4":
        prev = np.concatenate([np.zeros((n_rows, 1)), dt_all[:, :-1]], axis=1)
        w_first = 0.5 * (prev + dt_all)
    else:
        w_first = dt_all
    if combiner == "linear":
        pieces, piece_rows = [], []
        for k in range(n_seg):
            if mu_blocks[k] is None:
                continue
            m_k = int(m_sizes[k])
            w_k = np.repeat(w_body[:m_k, k : k + 1], steps, axis=1)
            w_k[:, 0] = w_first[:m_k, k]
            pieces.append(ad.sum_axis(ad.softplus(mu_blocks[k]) * w_k, axis=1))
            piece_rows.append(np.arange(m_k))
        per_row = ad.segment_sum(
            ad.concat_rows(pieces), np.concatenate(piece_rows), n_rows
        ) if pieces else ad.constant(np.zeros(n_rows))
        if cfg.method == "rk4":
            per_row = per_row + _final_boundary_terms(
                model, stacked, offsets, live_counts, seg_len, dt_all, steps, n_rows
            )
        comp_seq = ad.segment_sum(per_row, row_seq, n_seqs)
    else:
        # align influences on shared absolute sub-nodes, then softplus the sums
        seq_intervals = [nodes.size - 1 for nodes in stair.nodes]
        base = np.concatenate([[0], np.cumsum([n * steps for n in seq_intervals])]).astype(np.intp)
        node_w = np.zeros(int(base[-1]))
        node_seq = np.zeros(int(base[-1]), dtype=np.intp)
        for s in range(n_seqs):
            gaps = np.diff(stair.nodes[s])
            for a in range(seq_intervals[s]):
                ids = base[s] + a * steps + np.arange(steps)
                node_w[ids] = gaps[a] / steps
                node_seq[ids] = s
        flats, nids = [], []
        for k in range(n_seg):
            if mu_blocks[k] is None:
                continue
            m_k = int(m_sizes[k])
            a = (row_event[:m_k] + k) if mode == "parallel" else np.full(m_k, k, dtype=np.intp)
            nid_k = base[row_seq[:m_k]][:, None] + (a[:, None] * steps) + np.arange(steps)[None, :]
            flats.append(ad.reshape(mu_blocks[k], (m_k * steps, 1)))
            nids.append(nid_k.ravel())
        lam_nodes = ad.softplus(
            ad.segment_sum(ad.concat_rows(flats), np.concatenate(nids), int(base[-1]))
        )
        comp_seq = ad.sum_axis(
            ad.segment_sum(lam_nodes * node_w.reshape(-1, 1), node_seq, n_seqs), axis=1
        )

    logl_lambda_seq = logl_lambda_events - comp_seq
    loss = -(ad.total(logl_lambda_seq) + ad.total(logl_mark_seq))

    scored = np.maximum(stair.seq_lengths.astype(np.intp) - 1, 0)
    return BatchLoss(
        loss=loss,
        logl_lambda=np.asarray(ad.raw(logl_lambda_seq)).copy(),
        logl_mark=np.asarray(ad.raw(logl_mark_seq)).copy(),
        n_scored=scored,
        n_events=stair.seq_lengths.copy(),
        n_clamped=n_clamped,
    )


def _final_boundary_terms(model, stacked, offsets, live_counts, seg_len, dt_all, steps, n_rows):
    """Trapezoid closing term: half the last sub-step at each row's own final
    boundary, decoded from the packed stack."""
    alive = live_counts > 0
    if not alive.any():
        return ad.constant(np.zeros(n_rows))
    first_live = np.argmax(seg_len > 0, axis=1)
    k_star = first_live + live_counts - 1
    rows = np.flatnonzero(alive)
    idx = offsets[k_star[rows]] + rows
    fin = ad.gather_rows(stacked, idx)
    w = 0.5 * dt_all[rows, k_star[rows]]
    vals = ad.sum_axis(ad.softplus(model.mu_decoder(fin)) * w[:, None], axis=1)
    return ad.segment_sum(vals, rows, n_rows)


def batch_loss(
    model: DecoupledModel,
    sequences: list[Sequence],
    cfg: SolverConfig,
    mode: str = "parallel",
    use_checkpoint: bool = True,
) -> BatchLoss:
    """Taped negative log-likelihood of a batch under the training policy
    (first event unscored, integration from each sequence's first event)."""
    if mode == "parallel":
        return _loss_from_schedule(model, _parallel_schedule(sequences), mode, cfg, use_checkpoint)
    if mode != "sequential":
        raise ValueError(f"unknown mode {mode!r}")
    pieces = [
        _loss_from_schedule(model, _sequential_schedule(seq), mode, cfg, use_checkpoint)
        for seq in sequences
    ]
    loss = pieces[0].loss
    for p in pieces[1:]:
        loss = loss + p.loss
    return BatchLoss(
        loss=loss,
        logl_lambda=np.concatenate([p.logl_lambda for p in pieces]),
        logl_mark=np.concatenate([p.logl_mark for p in pieces]),
        n_scored=np.concatenate([p.n_scored for p in pieces]),
        n_events=np.concatenate([p.n_events for p in pieces]),
        n_clamped=sum(p.n_clamped for p in pieces),
    )


# ---------------------------------------------------------------------------
# untaped augmented co-integration
#
# State tuples (h rows, group scalars) advance together so CDF/expectation
# tracks see the compensator at every solver stage.


def _axpy(state, k, dts, factor):
    return tuple(s + (factor * dt) * kk for s, kk, dt in zip(state, k, dts))


def _aug_step(deriv, state, dts, method: str):
    """One solver step of a (rows, scalars) tuple; dts are per-component steps
    as fractions of the unit segment (deriv takes the stage fraction c)."""
    k1 = deriv(0.0, state)
    if method == "euler":
        return _axpy(state, k1, dts, 1.0)
    k2 = deriv(0.5, _axpy(state, k1, dts, 0.5))
    k3 = deriv(0.5, _axpy(state, k2, dts, 0.5))
    k4 = deriv(1.0, _axpy(state, k3, dts, 1.0))
    combo = tuple(
        (a + 2.0 * b + 2.0 * c + d) / 6.0 for a, b, c, d in zip(k1, k2, k3, k4)
    )
    return _axpy(state, combo, dts, 1.0)


def _combine_rates(mu: np.ndarray, live: np.ndarray, group: np.ndarray, n_groups: int, combiner: str) -> np.ndarray:
    """Per-group ground intensity from per-row influences (masked rows drop out)."""
    if combiner == "linear":
        vals = kernels.softplus(mu) * live
        return np.bincount(group, weights=vals, minlength=n_groups)
    summed = np.bincount(group, weights=mu * live, minlength=n_groups)
    return kernels.softplus(summed)


@dataclass
class AugmentedTrajectory:
    """Co-integrated trajectory of [h rows, compensator, CDF, expected time]."""

    times: np.ndarray  # (G,) absolute sub-node times from t_from
    lam: np.ndarray  # (G,) ground intensity at the nodes
    compensator: np.ndarray  # (G,) integral of lam from t_from
    cdf: np.ndarray  # (G,) next-event CDF conditioned at t_from
    expected_t: np.ndarray  # (G,) running integral of t * density
    hidden: np.ndarray  # (rows, d) history-row states at t_to
    cdf_overflow: bool = False  # CDF exceeded 1 + 1e-3 (insufficient steps/horizon)

    @property
    def residual_mass(self) -> float:
        return float(1.0 - self.cdf[-1])


def _prefix_states(
    model: DecoupledModel, stair: Staircase, cfg: SolverConfig, with_compensator: bool = False
):
    """Own-clock forward pass (no tape): boundary states after every lockstep
    segment, stacked (S, R, d), plus the final states.

    with_compensator co-integrates each row's integral of softplus(mu) on its
    own clock alongside h (the linear-combinator compensator route); the
    per-row integrals come back as a third result.
    """
    onehot = model.onehot(stair.row_mark)
    d = model.config.hidden_dim
    h = model.embedding.rows_raw(stair.row_mark)
    if with_compensator:
        h = np.concatenate([h, np.zeros((h.shape[0], 1))], axis=1)
    steps = cfg.steps_per_interval
    stepper = step_euler if cfg.method == "euler" else step_rk4

    def fieldfn(t, y):
        hh = y[:, :d]
        t_col = np.broadcast_to(np.asarray(t, dtype=np.float64), (y.shape[0], 1))
        dh = model.field_raw(hh, t_col, onehot)
        if not with_compensator:
            return dh
        ds = kernels.softplus(model.decode_mu_raw(hh))[:, None]
        return np.concatenate([dh, ds], axis=1)

    boundaries = np.empty((stair.num_segments, stair.num_rows, d))
    for k in range(stair.num_segments):
        dt = (stair.seg_len[:, k : k + 1]) / steps
        e0 = stair.elapsed0[:, k : k + 1]
        for m in range(steps):
            h = stepper(fieldfn, h, e0 + m * dt, dt)
        boundaries[k] = h[:, :d]
    if with_compensator:
        return boundaries, h[:, :d], h[:, d]
    return boundaries, h


def _event_terms_from_boundaries(model, stair: Staircase, boundaries, combiner: str):
    """ln lambda(t_i | H_i) and mark log-probs from prefix boundary states."""
    gather, pair_event, event_seq, event_mark, event_pos = _pair_maps(stair, "parallel")
    n_events = int(pair_event.max() + 1) if pair_event.size else 0
    if n_events == 0:
        z = np.zeros(stair.num_sequences)
        return z, z, 0
    stacked = boundaries.reshape(-1, boundaries.shape[-1])
    hist = stacked[gather]
    mu = model.decode_mu_raw(hist)
    if combiner == "linear":
        lam = np.bincount(pair_event, weights=kernels.softplus(mu), minlength=n_events)
    else:
        lam = kernels.softplus(np.bincount(pair_event, weights=mu, minlength=n_events))
    clamped = int((lam <= _FLOOR).sum())
    log_lam = np.log(np.maximum(lam, _FLOOR))
    fhat = model.decode_marks_raw(hist)
    logits = np.zeros((n_events, model.config.num_marks))
    np.add.at(logits, pair_event, fhat)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    mark_terms = logp[np.arange(n_events), event_mark]
    ll_lam = np.bincount(event_seq, weights=log_lam, minlength=stair.num_sequences)
    ll_mark = np.bincount(event_seq, weights=mark_terms, minlength=stair.num_sequences)
    return ll_lam, ll_mark, clamped


def integrated_compensator(
    model: DecoupledModel, seq: Sequence, t: float, cfg: SolverConfig
) -> float:
    """Lambda_g(t) by absolute-time co-integration with the running history
    (the augmented-system route; works for both combinators)."""
    traj = integrate_augmented(model, seq, history_cut=None, t_from=float(seq.times[0]), t_to=t, cfg=cfg)
    return float(traj.compensator[-1])


def compensator_parallel(model: DecoupledModel, seq: Sequence, t: float, cfg: SolverConfig) -> float:
    """Lambda_g(t) as the sum of per-event integrals on their own clocks.

    Valid only for the linear combinator, where the intensity is the plain sum
    of per-event softplus influences; raises otherwise. Each row co-integrates
    [h_j, s_j] with ds_j = softplus(mu_j), rows advancing in lockstep over
    their own node ladders (later event times, then t).
    """
    if model.config.combiner != "linear":
        raise ValueError("the parallel compensator identity requires the linear combinator")
    born = seq.times < t
    if not born.any():
        return 0.0
    times = seq.times[born]
    marks = seq.marks[born]
    onehot = model.onehot(marks)
    d = model.config.hidden_dim
    n_rows = times.size
    stepper = step_euler if cfg.method == "euler" else step_rk4
    steps = cfg.steps_per_interval
    nodes = np.unique(np.concatenate([times, [t]]))
    state = np.concatenate([model.embedding.rows_raw(marks), np.zeros((n_rows, 1))], axis=1)

    def fieldfn(tt, y):
        h = y[:, :d]
        dh = model.field_raw(h, np.asarray(tt, dtype=np.float64).reshape(n_rows, 1), onehot)
        ds = kernels.softplus(model.decode_mu_raw(h))[:, None]
        return np.concatenate([dh, ds], axis=1)

    # padded per-row ladders: row born at t_j visits nodes strictly after t_j
    ladders = [np.concatenate([[t0], nodes[nodes > t0]]) for t0 in times]
    n_seg = max(l.size - 1 for l in ladders)
    starts = np.empty((n_rows, n_seg))
    ends = np.empty((n_rows, n_seg))
    for r, lad in enumerate(ladders):
        gaps = np.diff(lad)
        starts[r, : gaps.size] = lad[:-1]
        ends[r, : gaps.size] = lad[1:]
        starts[r, gaps.size :] = lad[-1]
        ends[r, gaps.size :] = lad[-1]
    for k in range(n_seg):
        e0 = (starts[:, k] - times)[:, None]
        dt = ((ends[:, k] - starts[:, k]) / steps)[:, None]
        for m in range(steps):
            state = stepper(fieldfn, state, e0 + m * dt, dt)
    return float(state[:, d].sum())


def integrate_augmented(
    model: DecoupledModel,
    seq: Sequence,
    history_cut: int | None,
    t_from: float,
    t_to: float,
    cfg: SolverConfig,
    min_segments: int = 1,
) -> AugmentedTrajectory:
    """Eq.-8-style single pass: d/dt [h, Lambda, F, E] with F and E seeded at
    t_from (F is the next-event CDF conditioned on the history at t_from).

    history_cut = i freezes the history to the first i events; None lets the
    history grow as integration passes each event (then F/E are not meaningful
    and only the compensator track should be read).
    """
    if t_to < t_from:
        raise ValueError("t_to must be >= t_from")
    combiner = model.config.combiner
    running = history_cut is None
    n_hist = len(seq) if running else int(history_cut)
    times = seq.times[:n_hist]
    marks = seq.marks[:n_hist]
    if not running and n_hist > 0 and t_from < float(times[-1]) - 1e-12:
        raise ValueError("t_from must be at or after the last history event")
    if n_hist == 0:
        # empty history: the intensity is a known constant
        grid = np.linspace(t_from, t_to, cfg.steps_per_interval + 1)
        lam0 = ground_intensity_empty(combiner)
        tau = grid - t_from
        comp = lam0 * tau
        cdf = 1.0 - np.exp(-comp)
        if lam0 > 0:
            et = t_from * cdf + (1.0 - np.exp(-lam0 * tau) * (lam0 * tau + 1.0)) / lam0
        else:
            et = np.zeros_like(grid)
        return AugmentedTrajectory(grid, np.full(grid.size, lam0), comp, cdf, et, np.zeros((0, model.config.hidden_dim)))
    onehot = model.onehot(marks)

    # segment grid: event times inside (t_from, t_to), then t_to
    inner = seq.times[(seq.times > t_from) & (seq.times < t_to)] if running else np.array([])
    edges = np.unique(np.concatenate([[t_from], inner, [t_to]]))

    # history rows are first brought from their own event times to t_from
    h = model.embedding.rows_raw(marks)
    if times.size and t_from > float(times[0]) + 1e-15:
        pre_stair = build_staircase([Sequence(times, marks, float(t_from))])
        _, h = _prefix_states(model, pre_stair, cfg)

    nodes_t = [t_from]
    live0 = (times < t_from + 1e-15) if running else np.ones(times.size, dtype=bool)
    lam_track = [_stage_rate(model, h, times, onehot, live0, combiner)]
    comp_track, cdf_track, et_track = [0.0], [0.0], [0.0]
    scal = np.zeros(3)  # Lambda, F, E
    steps = cfg.steps_per_interval
    for a in range(edges.size - 1):
        seg_start, seg_end = edges[a], edges[a + 1]
        if seg_end <= seg_start:
            continue
        live = (times <= seg_start + 1e-15) if running else np.ones(times.size, dtype=bool)
        dt = (seg_end - seg_start) / steps
        for m in range(steps):
            t0 = seg_start + m * dt

            def deriv(frac, state):
                hh, sc = state
                t_stage = t0 + frac * dt
                dh = model.field_raw(
                    hh, (t_stage - times)[:, None].clip(min=0.0), onehot
                ) * live[:, None]
                lam = _stage_rate(model, hh, times, onehot, live, combiner)
                f_val = lam * np.exp(-sc[0])
                return dh, np.array([lam, f_val, t_stage * f_val])

            h, scal = _aug_step(deriv, (h, scal), (dt, dt), cfg.method)
            nodes_t.append(t0 + dt)
            lam_track.append(_stage_rate(model, h, times, onehot, live, combiner))
            comp_track.append(scal[0])
            cdf_track.append(scal[1])
            et_track.append(scal[2])
    cdf_arr = np.asarray(cdf_track)
    # the CDF track is only meaningful for a fixed conditioning history
    overflow = bool(not running and (cdf_arr > 1.0 + 1e-3).any())
    if overflow:
        warnings.warn("next-event CDF exceeded 1 + 1e-3; increase steps or shorten the horizon")
    return AugmentedTrajectory(
        times=np.asarray(nodes_t),
        lam=np.asarray(lam_track),
        compensator=np.asarray(comp_track),
        cdf=cdf_arr,
        expected_t=np.asarray(et_track),
        hidden=h,
        cdf_overflow=overflow,
    )


def _stage_rate(model, h, times, onehot, live, combiner) -> float:
    mu = model.decode_mu_raw(h)
    if combiner == "linear":
        return float((kernels.softplus(mu) * live).sum())
    total = float((mu * live).sum())
    return float(kernels.softplus(np.array([total]))[0])


def ground_intensity_empty(combiner: str) -> float:
    if combiner == "linear":
        return 0.0
    return float(np.log(2.0))


def normalize_density(f_grid, f_end: float):
    """Divide an integrated density by its total mass so it integrates to 1."""
    if f_end <= 1e-8:
        raise ValueError("density mass vanished (total probability below 1e-8)")
    return np.asarray(f_grid, dtype=np.float64) / f_end


# ---------------------------------------------------------------------------
# evaluation-path sequence likelihood


@dataclass(frozen=True)
class NllConfig:
    """Evaluation resolutions: the intensity part of the likelihood runs at
    RK4/64 and the mark part at Euler/16 by default."""

    lambda_solver: SolverConfig = SolverConfig("rk4", 64)
    mark_solver: SolverConfig = SolverConfig("euler", 16)


def _running_compensators(model: DecoupledModel, sequences: list[Sequence], cfg: SolverConfig) -> np.ndarray:
    """Batched Lambda_g(t_end) per sequence, co-integrated in absolute time
    with the history growing as each event is passed."""
    n_seqs = len(sequences)
    nodes = []
    for seq in sequences:
        ns = list(seq.times)
        if seq.t_end > seq.times[-1]:
            ns.append(seq.t_end)
        nodes.append(np.asarray(ns))
    n_int = np.array([n.size - 1 for n in nodes])
    max_int = int(n_int.max()) if n_seqs else 0
    row_seq, row_event, row_t0, row_mark = [], [], [], []
    for s, seq in enumerate(sequences):
        for j in range(len(seq)):
            row_seq.append(s)
            row_event.append(j)
            row_t0.append(seq.times[j])
            row_mark.append(seq.marks[j])
    row_seq = np.asarray(row_seq, dtype=np.intp)
    row_event = np.asarray(row_event, dtype=np.intp)
    row_t0 = np.asarray(row_t0)
    onehot = model.onehot(np.asarray(row_mark, dtype=np.intp))
    combiner = model.config.combiner
    steps = cfg.steps_per_interval

    h = model.embedding.rows_raw(np.asarray(row_mark, dtype=np.intp))
    lam_int = np.zeros(n_seqs)
    for a in range(max_int):
        active = a < n_int
        gap = np.array([nodes[s][a + 1] - nodes[s][a] if active[s] else 0.0 for s in range(n_seqs)])
        start = np.array([nodes[s][a] if active[s] else nodes[s][-1] for s in range(n_seqs)])
        live = (row_event <= a) & active[row_seq]
        dt_row = (gap[row_seq] * live / steps)[:, None]
        dt_seq = gap / steps
        for m in range(steps):
            t0_row = start[row_seq] + m * (gap[row_seq] / steps)

            def deriv(frac, state):
                hh, _ = state
                t_stage = t0_row + frac * (gap[row_seq] / steps)
                elapsed = np.clip(t_stage - row_t0, 0.0, None)[:, None]
                dh = model.field_raw(hh, elapsed, onehot)
                mu = model.decode_mu_raw(hh)
                lam = _combine_rates(mu, live, row_seq, n_seqs, combiner)
                return dh, lam

            h, lam_int = _aug_step(deriv, (h, lam_int), (dt_row, dt_seq), cfg.method)
    return lam_int


def model_nll(
    model: DecoupledModel, sequences: list[Sequence], cfg: NllConfig = NllConfig()
) -> list[LossBreakdown]:
    """Per-sequence log-likelihood breakdowns on the evaluation path.

    The intensity part (event log-intensities and the compensator) runs at
    cfg.lambda_solver, the mark part at cfg.mark_solver; the first event is
    never scored (the learned process has no immigrant rate).
    """
    stair = build_staircase(sequences)
    combiner = model.config.combiner
    if combiner == "linear":
        # per-row own-clock compensator co-integrates with the prefix pass
        b_lam, _, s_rows = _prefix_states(model, stair, cfg.lambda_solver, with_compensator=True)
        comp = np.bincount(stair.row_seq, weights=s_rows, minlength=len(sequences))
    else:
        b_lam, _ = _prefix_states(model, stair, cfg.lambda_solver)
        comp = _running_compensators(model, sequences, cfg.lambda_solver)
    ll_lam, _, clamped = _event_terms_from_boundaries(model, stair, b_lam, combiner)
    if cfg.mark_solver == cfg.lambda_solver:
        b_mark = b_lam
    else:
        b_mark, _ = _prefix_states(model, stair, cfg.mark_solver)
    _, ll_mark, _ = _event_terms_from_boundaries(model, stair, b_mark, combiner)
    out = []
    for s, seq in enumerate(sequences):
        out.append(
            LossBreakdown(
                logl_lambda=float(ll_lam[s] - comp[s]),
                logl_mark=float(ll_mark[s]),
                n_scored=max(len(seq) - 1, 0),
                n_clamped=int(clamped) if s == 0 else 0,
            )
        )
    if clamped:
        warnings.warn(f"{clamped} event intensities clamped at exp({LOG_CLAMP})")
    return out


# ---------------------------------------------------------------------------
# density passes (next-event CDF / expected time per history cut)


@dataclass
class DensityResult:
    """Augmented pass conditioned on one history cut, from the last observed
    event to an adaptive horizon (CDF target or segment cap)."""

    cut: int
    t_from: float
    times: np.ndarray
    lam: np.ndarray
    compensator: np.ndarray
    cdf: np.ndarray
    expected_t_track: np.ndarray
    mark_probs: np.ndarray  # f(k | t_hat)
    cdf_overflow: bool
    mark_probs_track: np.ndarray | None = None  # (G, K) if recorded

    @property
    def cdf_end(self) -> float:
        return float(self.cdf[-1])

    @property
    def residual_mass(self) -> float:
        return float(1.0 - self.cdf[-1])

    @property
    def survival(self) -> np.ndarray:
        """S(t) = 1 - F(t) on the pass grid."""
        return 1.0 - self.cdf

    @property
    def expected_time(self) -> float:
        """E[t | event before the horizon], the Et track normalized by mass."""
        return float(normalize_density(self.expected_t_track[-1], self.cdf_end))

    @property
    def predicted_mark(self) -> int:
        return int(np.argmax(self.mark_probs))


def density_passes(
    model: DecoupledModel,
    seq: Sequence,
    cuts: list[int],
    cfg: SolverConfig,
    horizon_cfg: HorizonConfig = HorizonConfig(),
    record_marks: bool = False,
) -> list[DensityResult]:
    """Augmented passes for several history cuts of one sequence at once.

    Cut c conditions on events [0, c) and starts at t_{c-1}. All cuts advance
    in lockstep over extension segments one mean gap long; a cut freezes once
    its CDF reaches horizon_cfg.density_target, and the pass stops when all
    cuts are frozen or max_density_segments is hit.
    """
    if not cuts:
        return []
    if min(cuts) < 1 or max(cuts) > len(seq):
        raise ValueError("cuts must lie in [1, len(seq)]")
    combiner = model.config.combiner
    steps = cfg.steps_per_interval
    d = model.config.hidden_dim
    n_cuts = len(cuts)
    mean_gap = float(np.mean(seq.gaps)) if len(seq) > 1 else max(seq.t_end - seq.times[0], 1.0)
    if mean_gap <= 0:
        mean_gap = 1.0

    # prefix states on the event grid give every cut's initial history rows
    stair = build_staircase([seq])
    boundaries, _ = _prefix_states(model, stair, cfg)
    pair_cut, pair_row_t0, pair_mark, h_rows = [], [], [], []
    for ci, c in enumerate(cuts):
        t_from_c = float(seq.times[c - 1])
        for j in range(c):
            pair_cut.append(ci)
            pair_row_t0.append(float(seq.times[j]))
            pair_mark.append(int(seq.marks[j]))
            if j == c - 1:
                h_rows.append(model.embedding.rows_raw(np.array([seq.marks[j]]))[0])
            else:
                h_rows.append(boundaries[c - 2 - j, j])
    pair_cut = np.asarray(pair_cut, dtype=np.intp)
    pair_row_t0 = np.asarray(pair_row_t0)
    onehot = model.onehot(np.asarray(pair_mark, dtype=np.intp))
    h = np.asarray(h_rows).reshape(-1, d)
    t_from = np.asarray([float(seq.times[c - 1]) for c in cuts])

    scal = np.zeros((n_cuts, 3))  # Lambda, F, E per cut
    t_cursor = t_from.copy()
    nodes_track = [t_from.copy()]
    lam0 = _stage_rate_group(model, h, pair_cut, n_cuts, onehot, combiner)
    lam_track, comp_track, cdf_track, et_track = [lam0], [np.zeros(n_cuts)], [np.zeros(n_cuts)], [np.zeros(n_cuts)]
    h_init = h.copy()
    mark_track = [_group_mark_probs(model, h, pair_cut, n_cuts)] if record_marks else None

    for seg_index in range(horizon_cfg.max_density_segments):
        live_cut = scal[:, 1] < horizon_cfg.density_target
        if not live_cut.any():
            break
        span = mean_gap * min(
            horizon_cfg.extension_growth**seg_index, horizon_cfg.max_segment_gap_multiples
        )
        seg = np.where(live_cut, span, 0.0)
        dt_cut = seg / steps
        dt_row = dt_cut[pair_cut][:, None]
        for m in range(steps):
            t0_cut = t_cursor + m * dt_cut

            def deriv(frac, state):
                hh, sc = state
                t_stage = t0_cut + frac * dt_cut
                elapsed = (t_stage[pair_cut] - pair_row_t0)[:, None]
                dh = model.field_raw(hh, elapsed, onehot)
                lam = _stage_rate_group(model, hh, pair_cut, n_cuts, onehot, combiner)
                f_val = lam * np.exp(-sc[:, 0])
                return dh, np.stack([lam, f_val, t_stage * f_val], axis=1)

            h, scal = _aug_step(deriv, (h, scal), (dt_row, dt_cut[:, None]), cfg.method)
            nodes_track.append(t0_cut + dt_cut)
            lam_track.append(_stage_rate_group(model, h, pair_cut, n_cuts, onehot, combiner))
            comp_track.append(scal[:, 0].copy())
            cdf_track.append(scal[:, 1].copy())
            et_track.append(scal[:, 2].copy())
            if record_marks:
                mark_track.append(_group_mark_probs(model, h, pair_cut, n_cuts))
        t_cursor = t_cursor + seg

    nodes_arr = np.stack(nodes_track, axis=1)  # (C, G)
    lam_arr = np.stack(lam_track, axis=1)
    comp_arr = np.stack(comp_track, axis=1)
    cdf_arr = np.stack(cdf_track, axis=1)
    et_arr = np.stack(et_track, axis=1)

    # mark distribution at the predicted time: integrate the stored initial
    # rows once more from t_from to t_hat, then decode and combine
    with np.errstate(invalid="ignore"):
        t_hat = np.where(cdf_arr[:, -1] > 1e-8, et_arr[:, -1] / np.maximum(cdf_arr[:, -1], 1e-300), t_from)
    spans = np.clip(t_hat - t_from, 0.0, None)
    h_hat = h_init.copy()
    stepper = step_euler if cfg.method == "euler" else step_rk4
    dt_row = (spans[pair_cut] / steps)[:, None]
    e0 = (t_from[pair_cut] - pair_row_t0)[:, None]

    def elapsed_field(tt, y):
        return model.field_raw(y, np.asarray(tt, dtype=np.float64), onehot)

    for m in range(steps):
        h_hat = stepper(elapsed_field, h_hat, e0 + m * dt_row, dt_row)
    fhat = model.decode_marks_raw(h_hat)
    logits = np.zeros((n_cuts, model.config.num_marks))
    np.add.at(logits, pair_cut, fhat)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    overflow = cdf_arr > 1.0 + 1e-3
    if overflow.any():
        warnings.warn("next-event CDF exceeded 1 + 1e-3 on a density pass")
    mark_arr = np.stack(mark_track, axis=1) if record_marks else None  # (C, G, K)
    results = []
    for ci, c in enumerate(cuts):
        results.append(
            DensityResult(
                cut=int(c),
                t_from=float(t_from[ci]),
                times=nodes_arr[ci],
                lam=lam_arr[ci],
                compensator=comp_arr[ci],
                cdf=cdf_arr[ci],
                expected_t_track=et_arr[ci],
                mark_probs=probs[ci],
                cdf_overflow=bool(overflow[ci].any()),
                mark_probs_track=mark_arr[ci] if record_marks else None,
            )
        )
    return results


def _stage_rate_group(model, h, group, n_groups, onehot, combiner) -> np.ndarray:
    mu = model.decode_mu_raw(h)
    live = np.ones(mu.size)
    return _combine_rates(mu, live, group, n_groups, combiner)


def _group_mark_probs(model, h, group, n_groups) -> np.ndarray:
    fhat = model.decode_marks_raw(h)
    logits = np.zeros((n_groups, model.config.num_marks))
    np.add.at(logits, group, fhat)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    return p / p.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# closed-form (stub) processes scored by the same machinery


class CallableProcess:
    """Any process given by closed-form conditional intensities.

    lam_fn(seq, n_hist, t) -> ground intensity at t given the first n_hist
    events; mark_fn(seq, n_hist, t) -> length-K mark distribution. Likelihoods
    co-integrate the compensator with the same solvers the model uses, so
    oracle identities exercise the real evaluation plumbing.
    """

    def __init__(self, num_marks: int, lam_fn, mark_fn, policy: LikelihoodPolicy = ORACLE_POLICY):
        self.num_marks = num_marks
        self.lam_fn = lam_fn
        self.mark_fn = mark_fn
        self.policy = policy

    def log_likelihood(self, seq: Sequence, cfg: NllConfig = NllConfig()) -> LossBreakdown:
        policy = self.policy
        start = 0 if policy.include_first_event else 1
        ll_lam, ll_mark, clamped = 0.0, 0.0, 0
        for i in range(start, len(seq)):
            lam = max(float(self.lam_fn(seq, i, float(seq.times[i]))), _FLOOR)
            if lam <= _FLOOR:
                clamped += 1
            ll_lam += np.log(lam)
            probs = np.asarray(self.mark_fn(seq, i, float(seq.times[i])))
            ll_mark += np.log(max(float(probs[seq.marks[i]]), 1e-300))
        t0 = 0.0 if policy.integrate_from_zero else float(seq.times[0])
        edges = np.unique(np.concatenate([[t0], seq.times[seq.times > t0], [seq.t_end]]))
        comp = 0.0
        for a in range(edges.size - 1):
            n_hist = int(np.searchsorted(seq.times, edges[a], side="right"))
            comp += _co_integrate_rate(
                lambda t: self.lam_fn(seq, n_hist, t), edges[a], edges[a + 1], cfg.lambda_solver
            )
        return LossBreakdown(
            logl_lambda=float(ll_lam - comp),
            logl_mark=float(ll_mark),
            n_scored=len(seq) - start,
            n_clamped=clamped,
        )

    def density_passes(
        self,
        seq: Sequence,
        cuts: list[int],
        cfg: SolverConfig,
        horizon_cfg: HorizonConfig = HorizonConfig(),
    ) -> list[DensityResult]:
        mean_gap = float(np.mean(seq.gaps)) if len(seq) > 1 else max(seq.t_end - seq.times[0], 1.0)
        if mean_gap <= 0:
            mean_gap = 1.0
        out = []
        for c in cuts:
            t_from = float(seq.times[c - 1])
            lam_fn = lambda t, c=c: self.lam_fn(seq, c, t)  # noqa: E731
            nodes, lam, comp, cdf, et = _scalar_density(
                lam_fn, t_from, mean_gap, cfg, horizon_cfg
            )
            t_hat = float(et[-1] / cdf[-1]) if cdf[-1] > 1e-8 else t_from
            probs = np.asarray(self.mark_fn(seq, c, t_hat), dtype=np.float64)
            probs = probs / probs.sum()
            out.append(
                DensityResult(
                    cut=int(c),
                    t_from=t_from,
                    times=nodes,
                    lam=lam,
                    compensator=comp,
                    cdf=cdf,
                    expected_t_track=et,
                    mark_probs=probs,
                    cdf_overflow=bool((cdf > 1.0 + 1e-3).any()),
                )
            )
        return out


def _co_integrate_rate(lam_fn, t_from: float, t_to: float, cfg: SolverConfig) -> float:
    """Integral of a scalar rate by the solver's own quadrature (Simpson for RK4)."""
    if t_to <= t_from:
        return 0.0
    steps = cfg.steps_per_interval
    dt = (t_to - t_from) / steps
    total = 0.0
    for m in range(steps):
        t0 = t_from + m * dt
        if cfg.method == "euler":
            total += dt * float(lam_fn(t0))
        else:
            total += dt / 6.0 * (
                float(lam_fn(t0)) + 4.0 * float(lam_fn(t0 + dt / 2.0)) + float(lam_fn(t0 + dt))
            )
    return total


def _scalar_density(lam_fn, t_from: float, mean_gap: float, cfg: SolverConfig, horizon_cfg: HorizonConfig):
    steps = cfg.steps_per_interval
    nodes = [t_from]
    lam_track = [float(lam_fn(t_from))]
    comp_track, cdf_track, et_track = [0.0], [0.0], [0.0]
    scal = np.zeros(3)
    t = t_from
    for seg_index in range(horizon_cfg.max_density_segments):
        if scal[1] >= horizon_cfg.density_target:
            break
        span = mean_gap * min(
            horizon_cfg.extension_growth**seg_index, horizon_cfg.max_segment_gap_multiples
        )
        dt = span / steps
        for m in range(steps):
            t0 = t + m * dt

            def deriv(frac, state):
                _, sc = state
                t_stage = t0 + frac * dt
                lam = float(lam_fn(t_stage))
                f_val = lam * np.exp(-sc[0])
                return np.zeros((0, 1)), np.array([lam, f_val, t_stage * f_val])

            _, scal = _aug_step(deriv, (np.zeros((0, 1)), scal), (dt, dt), cfg.method)
            nodes.append(t0 + dt)
            lam_track.append(float(lam_fn(t0 + dt)))
            comp_track.append(scal[0])
            cdf_track.append(scal[1])
            et_track.append(scal[2])
        t += span
    return (
        np.asarray(nodes),
        np.asarray(lam_track),
        np.asarray(comp_track),
        np.asarray(cdf_track),
        np.asarray(et_track),
    )


def sequence_log_likelihood(process, seq: Sequence, cfg: NllConfig = NllConfig()) -> LossBreakdown:
    """Public entry: score one sequence with either a DecoupledModel or any
    CallableProcess-like object (ducks on .log_likelihood)."""
    if isinstance(process, DecoupledModel):
        return model_nll(process, [seq], cfg)[0]
    return process.log_likelihood(seq, cfg)

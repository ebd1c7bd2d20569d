"""Event sequences, JSONL ingestion, and preprocessing.

File format: one sequence per line, {"seq": [{"t": float, "k": int}, ...],
"t_end": float (optional, defaults to the last event time)}. A sibling header
JSON carries {"num_marks": K, "time_scale": s}. Preprocessing sorts by time,
drops the later-listed event of any exact time tie, and divides all times by
the pooled population standard deviation of training inter-event gaps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np


class DataError(ValueError):
    """Malformed dataset file or contract violation."""


@dataclass(frozen=True)
class Event:
    t: float
    k: int

    def __post_init__(self):
        if self.t < 0:
            raise DataError(f"event time must be non-negative, got {self.t}")
        if self.k < 0:
            raise DataError(f"mark must be non-negative, got {self.k}")


@dataclass
class Sequence:
    times: np.ndarray
    marks: np.ndarray
    t_end: float
    truncated: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.marks = np.asarray(self.marks, dtype=np.intp)
        if self.times.shape != self.marks.shape or self.times.ndim != 1:
            raise DataError("times and marks must be matching 1-D arrays")
        if self.times.size and self.t_end < self.times[-1] - 1e-12:
            raise DataError("t_end precedes the last event")
        self.t_end = float(self.t_end)

    def __len__(self) -> int:
        return self.times.size

    @property
    def events(self) -> list[Event]:
        return [Event(float(t), int(k)) for t, k in zip(self.times, self.marks)]

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.times) > 0))


@dataclass
class Dataset:
    sequences: list[Sequence]
    num_marks: int
    time_scale: float = 1.0

    def __post_init__(self):
        if self.num_marks < 1:
            raise DataError("num_marks must be >= 1")
        if self.time_scale <= 0:
            raise DataError("time_scale must be positive")
        for idx, seq in enumerate(self.sequences):
            if len(seq) and seq.marks.max() >= self.num_marks:
                raise DataError(f"sequence {idx} has mark >= num_marks={self.num_marks}")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def num_events(self) -> int:
        return int(sum(len(s) for s in self.sequences))


# ---------------------------------------------------------------------------
# IO


def load_dataset(path: str, format: str = "jsonl", num_marks: int | None = None) -> Dataset:
    """Read a raw (unscaled) dataset in file order.

    num_marks comes from the sibling header when present, the explicit
    argument otherwise, or is inferred from the data as a last resort.
    Non-monotone times are tolerated here and resolved by preprocess().
    """
    if format != "jsonl":
        raise DataError(f"unsupported format {format!r}")
    header = read_header(header_path(path))
    declared = num_marks if num_marks is not None else (header or {}).get("num_marks")
    sequences: list[Sequence] = []
    max_mark = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if "seq" not in row or not isinstance(row["seq"], list) or not row["seq"]:
                raise DataError(f"{path}:{lineno}: missing or empty 'seq'")
            times, marks = [], []
            for ev in row["seq"]:
                try:
                    t, k = float(ev["t"]), ev["k"]
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: malformed event {ev!r}") from exc
                if not isinstance(k, int) or isinstance(k, bool):
                    raise DataError(f"{path}:{lineno}: mark {k!r} is not an integer")
                if declared is not None and not 0 <= k < declared:
                    raise DataError(f"{path}:{lineno}: mark {k} outside [0, {declared})")
                times.append(t)
                marks.append(k)
                max_mark = max(max_mark, k)
            t_end = float(row.get("t_end", max(times)))
            sequences.append(Sequence(np.array(times), np.array(marks), t_end))
    if not sequences:
        raise DataError(f"{path}: no sequences")
    k_total = declared if declared is not None else max_mark + 1
    return Dataset(sequences, num_marks=int(k_total), time_scale=float((header or {}).get("time_scale", 1.0)))


def save_dataset(path: str, ds: Dataset, write_header: bool = True) -> None:
    with open(path, "w") as fh:
        for seq in ds.sequences:
            row = {
                "seq": [{"t": float(t), "k": int(k)} for t, k in zip(seq.times, seq.marks)],
                "t_end": seq.t_end,
            }
            fh.write(json.dumps(row) + "\n")
    if write_header:
        with open(header_path(path), "w") as fh:
            json.dump({"num_marks": ds.num_marks, "time_scale": ds.time_scale}, fh)


def header_path(path: str) -> str:
    return str(path) + ".header.json"


def read_header(path: str) -> dict | None:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None


# ---------------------------------------------------------------------------
# preprocessing


def deduplicate(seq: Sequence) -> Sequence:
    """Drop the later-listed event of every exact time tie.

    Requires non-decreasing times; the survivor of a run of equal times is the
    first-listed event. Idempotent.
    """
    if len(seq) == 0:
        return seq
    if np.any(np.diff(seq.times) < 0):
        raise DataError("deduplicate needs non-decreasing times (sort first)")
    keep = np.concatenate([[True], np.diff(seq.times) > 0])
    return replace(seq, times=seq.times[keep], marks=seq.marks[keep])


def sort_by_time(seq: Sequence) -> Sequence:
    """Stable sort by time; later-listed events stay later within a tie."""
    order = np.argsort(seq.times, kind="stable")
    return replace(seq, times=seq.times[order], marks=seq.marks[order])


def compute_time_scale(train: Dataset) -> float:
    """Population std of inter-event gaps pooled over training sequences.

    Degenerate cases fall back: zero variance -> mean gap, zero mean -> 1.0.
    """
    gaps = np.concatenate([s.gaps for s in train.sequences if len(s) >= 2] or [np.array([])])
    if gaps.size == 0:
        raise DataError("no inter-event gaps available to compute a time scale")
    scale = float(np.std(gaps))  # population (divide by n)
    if scale > 0:
        return scale
    fallback = float(np.mean(gaps))
    return fallback if fallback > 0 else 1.0


def apply_scale(ds: Dataset, scale: float) -> Dataset:
    """Divide every event time and t_end by scale; records the divisor."""
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    sequences = [
        replace(s, times=s.times / scale, t_end=s.t_end / scale) for s in ds.sequences
    ]
    return Dataset(sequences, ds.num_marks, time_scale=ds.time_scale * scale)


def preprocess(ds: Dataset, scale: float | None = None) -> Dataset:
    """Sort, drop time ties, then rescale (scale computed here when not given)."""
    cleaned = Dataset(
        [deduplicate(sort_by_time(s)) for s in ds.sequences], ds.num_marks, ds.time_scale
    )
    if scale is None:
        scale = compute_time_scale(cleaned)
    return apply_scale(cleaned, scale)


def split(ds: Dataset, fractions: tuple[float, float, float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic seeded train/val/test split by sequence."""
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise DataError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds.sequences))
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    picks = (
        order[:n_train],
        order[n_train : n_train + n_val],
        order[n_train + n_val :],
    )
    return tuple(
        Dataset([ds.sequences[i] for i in part], ds.num_marks, ds.time_scale)
        for part in picks
    )

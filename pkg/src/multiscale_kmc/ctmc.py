"""Exact simulation of continuous-time Markov jump processes.

Two kinds of chains are supported:

* :class:`IntensityMatrix` -- a finite chain given by a dense rate matrix with
  the zero-diagonal convention (the generator is ``Q - diag(Q @ 1)``);
* :class:`LatticeChain` -- a chain on ``{0..n-1} x Z`` whose rates only
  depend on the local coordinate and move the integer coordinate by at most
  one step. Rows are produced on demand, nothing is truncated.

Both expose a CSR :class:`TransitionTable` consumed by the JIT kernel in
:mod:`multiscale_kmc._kernels`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO, Union

import numpy as np

from . import _kernels
from .errors import AbsorbingState, BadDimension, EventBudgetExceeded, NegativeRate

DEFAULT_MAX_EVENTS = 10**8

_UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class TransitionTable:
    """Outgoing transitions of every local state in CSR layout."""

    indptr: np.ndarray
    dest: np.ndarray
    shift: np.ndarray
    rate: np.ndarray
    cum: np.ndarray

    @classmethod
    def from_entries(cls, n_local: int, entries: Iterable[tuple[int, int, int, float]]):
        """Build from ``(source, dest, shift, rate)`` tuples; zero rates are dropped."""
        rows: list[list[tuple[int, int, float]]] = [[] for _ in range(n_local)]
        for src, dst, sh, r in entries:
            if r > 0.0:
                rows[src].append((dst, sh, float(r)))
        indptr = np.zeros(n_local + 1, dtype=np.int64)
        dest, shift, rate = [], [], []
        for i, row in enumerate(rows):
            indptr[i + 1] = indptr[i] + len(row)
            for dst, sh, r in row:
                dest.append(dst)
                shift.append(sh)
                rate.append(r)
        rate_arr = np.asarray(rate, dtype=np.float64)
        cum = np.empty_like(rate_arr)
        for i in range(n_local):
            lo, hi = indptr[i], indptr[i + 1]
            cum[lo:hi] = np.cumsum(rate_arr[lo:hi])
        return cls(
            indptr=indptr,
            dest=np.asarray(dest, dtype=np.int64),
            shift=np.asarray(shift, dtype=np.int64),
            rate=rate_arr,
            cum=cum,
        )

    @property
    def n_local(self) -> int:
        return self.indptr.shape[0] - 1

    def total_rate(self, local: int) -> float:
        lo, hi = self.indptr[local], self.indptr[local + 1]
        return float(self.cum[hi - 1]) if hi > lo else 0.0


def _check_rates(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NegativeRate(f"{name} has non-finite entries")
    bad = np.argwhere(arr < 0)
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise NegativeRate(f"{name}[{i}][{j}] = {float(arr[i, j])!r} is negative")


class IntensityMatrix:
    """Square nonnegative rate matrix with zero diagonal.

    Diagonal entries of the input are discarded: for a jump process they
    carry no information.
    """

    def __init__(self, rates, name: str = "Q"):
        arr = np.array(rates, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise BadDimension(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
        np.fill_diagonal(arr, 0.0)
        _check_rates(arr, name)
        arr.setflags(write=False)
        self.rates = arr
        self.name = name

    finite = True

    @property
    def dim(self) -> int:
        return self.rates.shape[0]

    @property
    def n_local(self) -> int:
        return self.dim

    def __repr__(self) -> str:
        return f"IntensityMatrix(dim={self.dim})"

    def __eq__(self, other) -> bool:
        return isinstance(other, IntensityMatrix) and np.array_equal(self.rates, other.rates)

    __hash__ = None

    def exit_rates(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    def generator(self) -> np.ndarray:
        """The Markov generator ``Q - Delta`` (rows sum to zero)."""
        return self.rates - np.diag(self.exit_rates())

    def rate(self, i: int, j: int) -> float:
        return 0.0 if i == j else float(self.rates[i, j])

    @cached_property
    def table(self) -> TransitionTable:
        rows, cols = np.nonzero(self.rates)
        return TransitionTable.from_entries(
            self.dim, ((int(i), int(j), 0, self.rates[i, j]) for i, j in zip(rows, cols))
        )

    def encode(self, local: int, z: int = 0) -> int:
        return int(local)

    def decode(self, index: int) -> tuple[int, int]:
        return int(index), 0

    def check_state(self, index: int) -> None:
        if not 0 <= int(index) < self.dim:
            raise IndexError(f"state {index} out of range for dimension {self.dim}")


def zigzag(z: int) -> int:
    """Bijection Z -> N: 0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ..."""
    return 2 * z if z >= 0 else -2 * z - 1


def unzigzag(n: int) -> int:
    return n // 2 if n % 2 == 0 else -(n + 1) // 2


class LatticeChain:
    """Translation-invariant jump process on ``{0..n-1} x Z``.

    ``stay[x, x']`` is the rate from ``(x, z)`` to ``(x', z)``, ``left`` and
    ``right`` the rates to ``(x', z-1)`` and ``(x', z+1)``, identical for every
    ``z``. The state ``(x, z)`` has index ``x + n * zigzag(z)``.
    """

    finite = False

    def __init__(self, stay, left, right, name: str = "lattice"):
        blocks = [np.array(b, dtype=np.float64) for b in (stay, left, right)]
        n = blocks[0].shape[0] if blocks[0].ndim == 2 else -1
        for label, b in zip(("stay", "left", "right"), blocks):
            if b.ndim != 2 or b.shape != (n, n) or n == 0:
                raise BadDimension(f"{name}.{label} must be a non-empty square matrix of size {n}")
            _check_rates(b, f"{name}.{label}")
        np.fill_diagonal(blocks[0], 0.0)
        for b in blocks:
            b.setflags(write=False)
        self.stay, self.left, self.right = blocks
        self.name = name

    @property
    def n_local(self) -> int:
        return self.stay.shape[0]

    def __repr__(self) -> str:
        return f"LatticeChain(n_local={self.n_local})"

    @cached_property
    def table(self) -> TransitionTable:
        entries = []
        for x in range(self.n_local):
            for sh, block in ((0, self.stay), (-1, self.left), (1, self.right)):
                for x2 in np.nonzero(block[x])[0]:
                    entries.append((x, int(x2), sh, block[x, x2]))
        return TransitionTable.from_entries(self.n_local, entries)

    def encode(self, local: int, z: int = 0) -> int:
        if not 0 <= local < self.n_local:
            raise IndexError(f"local state {local} out of range")
        return int(local) + self.n_local * zigzag(int(z))

    def decode(self, index: int) -> tuple[int, int]:
        index = int(index)
        if index < 0:
            raise IndexError(f"negative state index {index}")
        return index % self.n_local, unzigzag(index // self.n_local)

    def check_state(self, index: int) -> None:
        self.decode(index)

    def row(self, index: int) -> dict[int, float]:
        """Materialize the outgoing rates of one state."""
        x, z = self.decode(index)
        out: dict[int, float] = {}
        for sh, block in ((0, self.stay), (-1, self.left), (1, self.right)):
            for x2 in np.nonzero(block[x])[0]:
                out[self.encode(int(x2), z + sh)] = float(block[x, x2])
        return out

    def rate(self, i: int, j: int) -> float:
        return 0.0 if i == j else self.row(i).get(int(j), 0.0)


Chain = Union[IntensityMatrix, LatticeChain]


class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator keyed through
    ``SeedSequence(seed, spawn_key=(stream_id,))``, so distinct stream ids
    give independent streams without any serial jumping.
    """

    def __init__(self, seed: int, stream_id: int = 0, block: int = 4096):
        if stream_id < 0:
            raise ValueError("stream_id must be nonnegative")
        self.seed = int(seed) & _UINT64_MASK
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._bitgen = np.random.Philox(seq)
        self._block = block
        self._words = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def _refill(self, need: int = 2) -> None:
        rest = self._words[self._pos:]
        fresh = self._bitgen.random_raw(max(self._block, need))
        self._words = np.concatenate([rest, fresh]) if rest.size else fresh
        self._pos = 0
        self._block = min(self._block * 2, 1 << 20)

    def uniform(self) -> float:
        """One draw from the open interval (0, 1)."""
        if self._pos >= self._words.shape[0]:
            self._refill(1)
        word = self._words[self._pos]
        self._pos += 1
        return (float(int(word) >> 12) + 0.5) * 2.0**-52


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One simulated path: the initial state and the ordered jump events.

    ``times[k]`` is the time of the k-th jump and ``states[k]`` the state
    entered at that time, so the path is right-continuous. ``absorbed`` is set
    when the path ended in a state with zero exit rate.
    """

    initial_state: int
    times: np.ndarray
    states: np.ndarray
    horizon: float
    absorbed: bool = False

    @property
    def n_events(self) -> int:
        return int(self.times.shape[0])

    @property
    def final_state(self) -> int:
        return int(self.states[-1]) if self.n_events else self.initial_state

    @property
    def events(self) -> list[tuple[float, int]]:
        return [(float(t), int(s)) for t, s in zip(self.times, self.states)]

    def path_states(self) -> np.ndarray:
        """States occupied on each holding interval, initial state first."""
        return np.concatenate([[self.initial_state], self.states]).astype(np.int64)

    def holding_times(self, until: float | None = None) -> np.ndarray:
        """Lengths of the holding intervals clipped to ``[0, until]``."""
        end = self.horizon if until is None else until
        edges = np.concatenate([[0.0], self.times, [end]])
        return np.diff(np.minimum(edges, end))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Trajectory)
            and self.initial_state == other.initial_state
            and self.horizon == other.horizon
            and self.absorbed == other.absorbed
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.states, other.states)
        )

    __hash__ = None


@dataclass(frozen=True)
class Target:
    """Stopping set for :func:`first_hit`.

    ``mask`` flags target local states; ``leave_macro`` stops as soon as the
    integer coordinate of a :class:`LatticeChain` leaves its starting value.
    """

    mask: np.ndarray | None = None
    leave_macro: bool = False


@dataclass(frozen=True)
class HitResult:
    time: float
    state: int
    events: int


def exit_rate(chain: Chain, i: int) -> float:
    """Total rate out of state ``i``."""
    if isinstance(chain, IntensityMatrix):
        chain.check_state(i)
        return float(chain.rates[int(i)].sum())
    local, _ = chain.decode(i)
    return chain.table.total_rate(local)


def _pick(table: TransitionTable, local: int, u: float) -> int:
    lo, hi = int(table.indptr[local]), int(table.indptr[local + 1])
    threshold = u * table.cum[hi - 1]
    for k in range(lo, hi - 1):
        if threshold < table.cum[k]:
            return k
    return hi - 1


def sample_next(chain: Chain, i: int, rng: RngStream) -> tuple[float, int]:
    """Draw the holding time in ``i`` and the state jumped to.

    Uses the same two uniforms, in the same order, as the compiled
    simulator, so stepping with this function replays :func:`simulate`.
    """
    chain.check_state(i)
    table = chain.table
    local, z = chain.decode(i)
    q = table.total_rate(local)
    if q == 0.0:
        raise AbsorbingState(int(i))
    wait = -math.log(rng.uniform()) / q
    k = _pick(table, local, rng.uniform())
    return wait, chain.encode(int(table.dest[k]), z + int(table.shift[k]))


_EMPTY_F = np.empty(0, dtype=np.float64)
_EMPTY_I = np.empty(0, dtype=np.int64)


def _drive(chain: Chain, start: int, rng: RngStream, *, horizon: float, mask: np.ndarray,
           leave_macro: bool, max_events: int, record: bool):
    table = chain.table
    local, z = chain.decode(start)
    z_ref = z
    t = 0.0
    n_events = 0
    n_out = 0
    cap = 256 if record else 0
    out_t = np.empty(cap, dtype=np.float64) if record else _EMPTY_F
    out_local = np.empty(cap, dtype=np.int64) if record else _EMPTY_I
    out_z = np.empty(cap, dtype=np.int64) if record else _EMPTY_I
    while True:
        status, local, z, t, pos, n_events, n_out = _kernels.advance(
            table.indptr, table.dest, table.shift, table.cum, mask, leave_macro, z_ref,
            local, z, t, horizon, rng._words, rng._pos, n_events, max_events,
            out_t, out_local, out_z, n_out,
        )
        rng._pos = pos
        if status == _kernels.NEED_RNG:
            rng._refill(2)
        elif status == _kernels.FULL:
            cap *= 2
            out_t = np.resize(out_t, cap)
            out_local = np.resize(out_local, cap)
            out_z = np.resize(out_z, cap)
        else:
            break
    return status, int(local), int(z), float(t), int(n_events), out_t[:n_out], out_local[:n_out], out_z[:n_out]


def simulate(chain: Chain, start: int, horizon: float, rng: RngStream,
             max_events: int = DEFAULT_MAX_EVENTS) -> Trajectory:
    """Simulate one path on ``[0, horizon]``.

    Raises :class:`EventBudgetExceeded` if ``max_events`` jumps happen before
    the horizon. Entering an absorbing state ends the path with
    ``absorbed=True``.
    """
    if not horizon >= 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon!r}")
    chain.check_state(start)
    no_stop = np.zeros(chain.n_local, dtype=np.bool_)
    status, _, _, t, n_events, ts, ls, zs = _drive(
        chain, int(start), rng, horizon=float(horizon), mask=no_stop, leave_macro=False,
        max_events=max_events, record=True,
    )
    if status == _kernels.BUDGET:
        raise EventBudgetExceeded(n_events, t)
    if isinstance(chain, IntensityMatrix):
        states = ls.copy()
    else:
        states = np.fromiter((chain.encode(int(a), int(b)) for a, b in zip(ls, zs)),
                             dtype=np.int64, count=ls.shape[0])
    return Trajectory(int(start), ts.copy(), states, float(horizon),
                      absorbed=status == _kernels.ABSORBED)


def _resolve_target(chain: Chain, target) -> Target:
    if isinstance(target, Target):
        if target.mask is not None:
            mask = np.asarray(target.mask, dtype=np.bool_)
            if mask.shape != (chain.n_local,):
                raise BadDimension(f"target mask must have length {chain.n_local}")
            return Target(mask, target.leave_macro)
        return Target(np.zeros(chain.n_local, dtype=np.bool_), target.leave_macro)
    if callable(target):
        if not chain.finite:
            raise TypeError("predicates over an unbounded lattice need a Target; "
                            "use Target(leave_macro=True) or a local mask")
        return Target(np.array([bool(target(i)) for i in range(chain.dim)], dtype=np.bool_))
    return _resolve_target(chain, Target(mask=np.asarray(target, dtype=np.bool_)))


def first_hit(chain: Chain, start: int, target, rng: RngStream,
              max_events: int = DEFAULT_MAX_EVENTS) -> HitResult:
    """Run until the path enters ``target`` and report when and where.

    ``target`` is a predicate over state indices (finite chains), a boolean
    mask over local states, or a :class:`Target`.
    """
    chain.check_state(start)
    tgt = _resolve_target(chain, target)
    local0, _ = chain.decode(start)
    if tgt.mask[local0]:
        raise ValueError(f"start state {start} already satisfies the target")
    status, local, z, t, n_events, *_ = _drive(
        chain, int(start), rng, horizon=math.inf, mask=tgt.mask, leave_macro=tgt.leave_macro,
        max_events=max_events, record=False,
    )
    state = chain.encode(local, z)
    if status == _kernels.BUDGET:
        raise EventBudgetExceeded(n_events, t)
    if status == _kernels.ABSORBED:
        raise AbsorbingState(state, t)
    return HitResult(t, state, n_events)


def first_hit_time(chain: Chain, start: int, target, rng: RngStream,
                   max_events: int = DEFAULT_MAX_EVENTS) -> float:
    return first_hit(chain, start, target, rng, max_events).time


def audit_trajectory(chain: Chain, traj: Trajectory) -> None:
    """Check path invariants and that every jump uses a positive rate of ``chain``.

    Raises ``ValueError`` describing the first violation.
    """
    times = traj.times
    if traj.n_events:
        if times[0] <= 0.0 or np.any(np.diff(times) <= 0.0):
            raise ValueError("jump times are not strictly increasing from 0")
        if times[-1] > traj.horizon:
            raise ValueError(f"jump at {times[-1]!r} after horizon {traj.horizon!r}")
    prev = traj.initial_state
    for k, s in enumerate(traj.states):
        s = int(s)
        if s == prev:
            raise ValueError(f"self-jump at event {k}")
        if chain.rate(prev, s) <= 0.0:
            raise ValueError(f"event {k}: jump {prev}->{s} has zero rate")
        prev = s
    if traj.absorbed and exit_rate(chain, prev) != 0.0:
        raise ValueError("absorbed flag set on a non-absorbing state")


def write_trajectory_csv(traj: Trajectory, out: str | Path | TextIO,
                         label: Callable[[int], str] | None = None,
                         comments: Sequence[str] = ()) -> None:
    """Write ``t,state_index,label`` rows, initial state at ``t=0`` first."""
    label = label or str
    own = isinstance(out, (str, Path))
    fh = open(out, "w", newline="") if own else out
    try:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "state_index", "label"])
        writer.writerow([f"{0.0:.17g}", traj.initial_state, label(traj.initial_state)])
        for t, s in zip(traj.times, traj.states):
            writer.writerow([f"{t:.17g}", int(s), label(int(s))])
    finally:
        if own:
            fh.close()


def trajectory_csv(traj: Trajectory, label: Callable[[int], str] | None = None,
                   comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    write_trajectory_csv(traj, buf, label, comments)
    return buf.getvalue()

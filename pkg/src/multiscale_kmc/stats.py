"""Monte Carlo validation harness for the limit theorems.

Exit times of the slow observable are sampled replica by replica, replica
``r`` of sweep row ``k`` drawing from stream ``k * STREAM_BLOCK + r`` of the
run seed. Results are gathered in stream order, so they do not depend on how
replicas were scheduled across threads.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctmc import DEFAULT_MAX_EVENTS, RngStream, exit_rate, first_hit, simulate
from .effective import LimitProcess, derive
from .errors import AbsorbingState, EventBudgetExceeded, KMCError, TooFewSamples
from .models import EnergyModel, RingModel, TwoMacroModel

STREAM_BLOCK = 1 << 32
MAX_FAIL_FRACTION = 0.01
Z95 = 1.959963984540054
# one-sample KS critical value at the 1% level, asymptotic form c / sqrt(n)
KS_C01 = 1.63


@dataclass(frozen=True, eq=False)
class ExitTimeSample:
    """Exit times of the slow observable, one per successful replica.

    ``jumps`` holds the change of the slow observable at the exit (the macro
    displacement for the ring, the energy change for the energy model).
    """

    values: np.ndarray
    jumps: np.ndarray
    epsilon: float | None
    model_id: str
    initial_state: int
    replica_count: int
    failures: int = 0
    absorbed: int = 0
    events: int = 0

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def fail_fraction(self) -> float:
        return (self.failures + self.absorbed) / self.replica_count if self.replica_count else 0.0


@dataclass(frozen=True)
class MomentReport:
    mean: float
    variance: float
    ci95_mean: tuple[float, float]
    ci95_variance: tuple[float, float]
    n_samples: int

    @property
    def sem(self) -> float:
        return math.sqrt(self.variance / self.n_samples)

    @property
    def variance_se(self) -> float:
        return (self.ci95_variance[1] - self.ci95_variance[0]) / (2 * Z95)


@dataclass(frozen=True, eq=False)
class Histogram:
    """Densities on ``[i*dx, (i+1)*dx)``, ``i < num_bins``, plus the mass beyond."""

    bin_width: float
    num_bins: int
    densities: np.ndarray
    tail_mass: float
    n_samples: int

    @property
    def edges(self) -> np.ndarray:
        return self.bin_width * np.arange(self.num_bins + 1)

    @property
    def total_mass(self) -> float:
        return float(self.densities.sum() * self.bin_width + self.tail_mass)


@dataclass(frozen=True)
class JumpAmplitude:
    p_right: float
    p_left: float
    mean: float
    n: int

    @property
    def p_right_se(self) -> float:
        return math.sqrt(self.p_right * (1 - self.p_right) / self.n)

    @property
    def mean_se(self) -> float:
        var = 1.0 - self.mean**2
        return math.sqrt(var / self.n)


@dataclass(frozen=True, eq=False)
class ResidualReport:
    """Martingale residual at the horizon and its predicted bracket.

    ``brackets`` is ``int_0^T Cbar(X_s) ds`` per replica, whose mean is the
    expected variance of the residual.
    """

    residual: MomentReport
    values: np.ndarray
    brackets: np.ndarray

    @property
    def bracket_mean(self) -> float:
        return float(self.brackets.mean())


def _values(sample) -> np.ndarray:
    if isinstance(sample, ExitTimeSample):
        return sample.values
    return np.asarray(sample, dtype=np.float64)


def _prepare(model, epsilon):
    if epsilon is not None and hasattr(model, "with_epsilon") and model.epsilon != epsilon:
        model = model.with_epsilon(epsilon)
    return model


def _run_replicas(func, n: int, jobs: int) -> list:
    if jobs <= 1 or n < 2 * jobs:
        return func(0, n)
    bounds = np.linspace(0, n, jobs + 1).astype(int)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(lambda lh: func(*lh), zip(bounds[:-1], bounds[1:])))
    return [item for part in parts for item in part]


def sample_exit_times(model, initial_state: int, epsilon: float | None = None, replica_count: int = 10_000,
                      seed: int = 0, *, stream_offset: int = 0, max_events: int = DEFAULT_MAX_EVENTS,
                      jobs: int = 1, model_id: str | None = None) -> ExitTimeSample:
    """First exit times of the slow observable from its initial value.

    Replicas that exhaust the event budget or get absorbed are counted, not
    raised; an absorbing initial state is an error since no replica can exit.
    """
    model = _prepare(model, epsilon)
    chain = model.chain
    initial_state = int(initial_state)
    if exit_rate(chain, initial_state) == 0.0:
        raise AbsorbingState(initial_state)
    target = model.exit_target(initial_state)
    slow0 = model.slow_observable(initial_state)

    def work(lo: int, hi: int) -> list:
        out = []
        for r in range(lo, hi):
            rng = RngStream(seed, stream_offset + r)
            try:
                hit = first_hit(chain, initial_state, target, rng, max_events)
            except EventBudgetExceeded:
                out.append(("budget", 0.0, 0.0, max_events))
            except AbsorbingState:
                out.append(("absorbed", 0.0, 0.0, 0))
            else:
                out.append(("ok", hit.time, model.slow_observable(hit.state) - slow0, hit.events))
        return out

    results = _run_replicas(work, replica_count, jobs)
    ok = [r for r in results if r[0] == "ok"]
    return ExitTimeSample(
        values=np.array([r[1] for r in ok], dtype=np.float64),
        jumps=np.array([r[2] for r in ok], dtype=np.float64),
        epsilon=getattr(model, "epsilon", None),
        model_id=model_id or getattr(model, "kind", type(model).__name__),
        initial_state=initial_state,
        replica_count=replica_count,
        failures=sum(r[0] == "budget" for r in results),
        absorbed=sum(r[0] == "absorbed" for r in results),
        events=sum(r[3] for r in results),
    )


def moments(sample) -> MomentReport:
    """Mean and unbiased variance with normal-approximation 95% intervals.

    The variance interval uses the delta method with the empirical fourth
    central moment, ``Var(s^2) ~ (m4 - s^4) / n``; it is approximate.
    """
    x = _values(sample)
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    mean = float(x.mean())
    dev = x - mean
    var = float(dev @ dev / (n - 1))
    m4 = float(np.mean(dev**4))
    half_mean = Z95 * math.sqrt(var / n)
    half_var = Z95 * math.sqrt(max(m4 - var**2, 0.0) / n)
    return MomentReport(mean, var, (mean - half_mean, mean + half_mean),
                        (var - half_var, var + half_var), n)


def histogram(sample, bin_width: float = 0.05, num_bins: int = 100) -> Histogram:
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if num_bins < 1:
        raise ValueError("num_bins must be positive")
    x = _values(sample)
    n = x.shape[0]
    idx = np.floor(x / bin_width)
    inside = idx < num_bins
    counts = np.bincount(idx[inside].astype(np.int64), minlength=num_bins)[:num_bins]
    if n == 0:
        return Histogram(bin_width, num_bins, np.zeros(num_bins), 0.0, 0)
    densities = counts / (n * bin_width)
    return Histogram(bin_width, num_bins, densities, float(np.count_nonzero(~inside)) / n, n)


def exponential_density(rate: float, x: np.ndarray) -> np.ndarray:
    return rate * np.exp(-rate * x)


def l1_error(hist: Histogram, rate: float, weighting: str = "riemann") -> float:
    """Distance between the histogram and the density ``rate * exp(-rate x)``.

    The reference is evaluated at the right end ``i*dx`` of bin ``i-1`` for
    ``i = 1..n``. ``riemann`` weights each term by ``dx`` (approximating the
    L1 integral on ``[0, n*dx]``); ``paper_literal`` weights it by ``1/n``.
    """
    if not rate > 0:
        raise ValueError("rate must be positive")
    if weighting == "riemann":
        w = hist.bin_width
    elif weighting == "paper_literal":
        w = 1.0 / hist.num_bins
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    ref = exponential_density(rate, hist.bin_width * np.arange(1, hist.num_bins + 1))
    return float(w * np.sum(np.abs(ref - hist.densities)))


def discrepancy(sample, rate: float) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and Exp(rate)."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    x = np.sort(_values(sample))
    n = x.shape[0]
    if n == 0:
        raise TooFewSamples("empty sample")
    cdf = -np.expm1(-rate * x)
    above = np.arange(1, n + 1) / n - cdf
    below = cdf - np.arange(n) / n
    return float(max(above.max(), below.max()))


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a = np.sort(_values(a))
    b = np.sort(_values(b))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.shape[0]
    fb = np.searchsorted(b, grid, side="right") / b.shape[0]
    return float(np.max(np.abs(fa - fb)))


def ks_threshold(n: int, m: int | None = None, c: float = KS_C01) -> float:
    """Asymptotic 1% KS critical value, one-sample (``m=None``) or two-sample."""
    if m is None:
        return c / math.sqrt(n)
    return c * math.sqrt((n + m) / (n * m))


def amplitude_law(sample: ExitTimeSample) -> JumpAmplitude:
    jumps = sample.jumps
    n = jumps.shape[0]
    if n == 0:
        raise TooFewSamples("no successful replica")
    right = int(np.count_nonzero(jumps == 1))
    left = n - right
    return JumpAmplitude(right / n, left / n, float(jumps.mean()), n)


def jump_amplitude(model: RingModel, epsilon: float | None = None, replica_count: int = 10_000,
                   seed: int = 0, initial_state: int | None = None, **kwargs) -> JumpAmplitude:
    """Law of the macro displacement at the first macro jump of the ring."""
    if not isinstance(model, RingModel):
        raise TypeError("jump amplitude is defined for the ring model")
    start = model.index(0, 0) if initial_state is None else initial_state
    sample = sample_exit_times(model, start, epsilon, replica_count, seed, **kwargs)
    return amplitude_law(sample)


def martingale_residual(model: TwoMacroModel, epsilon: float | None = None, horizon: float = 5.0,
                        replica_count: int = 10_000, seed: int = 0, initial_state: int = 0, *,
                        stream_offset: int = 0, max_events: int = DEFAULT_MAX_EVENTS) -> ResidualReport:
    """Residual ``Z_T - Z_0 - int_0^T Cbar(X_s) (1 - 2 Z_s) ds`` over replicas.

    The integrand is constant between jumps, so the integral is an exact sum
    over holding intervals.
    """
    if not isinstance(model, TwoMacroModel):
        raise TypeError("the residual diagnostic is defined for the two-macro model")
    model = _prepare(model, epsilon)
    chain = model.chain
    cbar = model.coupling_out()
    sign = 1.0 - 2.0 * (np.arange(model.n_states) // model.m)
    z_of = np.arange(model.n_states) // model.m
    residuals = np.empty(replica_count)
    brackets = np.empty(replica_count)
    for r in range(replica_count):
        traj = simulate(chain, initial_state, horizon, RngStream(seed, stream_offset + r), max_events)
        states = traj.path_states()
        dt = traj.holding_times()
        compensator = float(np.sum(cbar[states] * sign[states] * dt))
        residuals[r] = z_of[traj.final_state] - z_of[initial_state] - compensator
        brackets[r] = float(np.sum(cbar[states] * dt))
    if replica_count >= 2:
        rep = moments(residuals)
    else:
        v = float(residuals[0]) if replica_count else 0.0
        rep = MomentReport(v, 0.0, (v, v), (0.0, 0.0), replica_count)
    return ResidualReport(rep, residuals, brackets)


@dataclass(frozen=True, eq=False)
class SweepRow:
    epsilon: float
    sample: ExitTimeSample
    moments: MomentReport | None
    histogram: Histogram
    l1: float
    discrepancy: float
    amplitude: JumpAmplitude | None = None
    error: str | None = None

    @property
    def fail_fraction(self) -> float:
        return self.sample.fail_fraction

    @property
    def failed(self) -> bool:
        return self.error is not None or self.fail_fraction > MAX_FAIL_FRACTION


@dataclass(frozen=True, eq=False)
class SweepReport:
    rows: list[SweepRow]
    limit_rate: float
    model_id: str
    seed: int
    initial_state: int
    weighting: str = "riemann"
    header: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(row.failed for row in self.rows)

    def row(self, epsilon: float) -> SweepRow:
        for r in self.rows:
            if r.epsilon == epsilon:
                return r
        raise KeyError(epsilon)


def limit_rate(model, initial_state: int) -> float:
    """Exit rate of the slow observable's limit law from ``initial_state``."""
    if isinstance(model, LimitProcess):
        return exit_rate(model.chain, initial_state)
    if isinstance(model, EnergyModel):
        eff = derive(model, model.total_energy(initial_state))
    else:
        eff = derive(model)
    return eff.exit_rate(model.slow_observable(initial_state))


def sweep(model, epsilons: Sequence[float], replica_count: int = 10_000, seed: int = 0,
          initial_state: int = 0, *, bin_width: float = 0.05, num_bins: int = 100,
          weighting: str = "riemann", max_events: int = DEFAULT_MAX_EVENTS, jobs: int = 1,
          model_id: str | None = None, header: dict | None = None) -> SweepReport:
    """Exit-time statistics against the analytic limit law for each epsilon.

    ``model`` is any model (rebuilt at each epsilon) or a :class:`LimitProcess`.
    Rows come out sorted by decreasing epsilon; row ``k`` in that order uses
    streams ``k * STREAM_BLOCK + r``.
    """
    eps_list = sorted({float(e) for e in epsilons}, reverse=True)
    if not eps_list or any(not e > 0 for e in eps_list):
        raise ValueError("epsilons must be a nonempty list of positive numbers")
    rate = limit_rate(model, initial_state)
    model_id = model_id or getattr(model, "kind", "limit")
    rows = []
    for k, eps in enumerate(eps_list):
        sample = ExitTimeSample(np.empty(0), np.empty(0), eps, model_id, initial_state, replica_count)
        try:
            sample = sample_exit_times(model, initial_state, eps, replica_count, seed,
                                       stream_offset=k * STREAM_BLOCK, max_events=max_events,
                                       jobs=jobs, model_id=model_id)
            hist = histogram(sample, bin_width, num_bins)
            amp = amplitude_law(sample) if isinstance(model, RingModel) else None
            rows.append(SweepRow(eps, sample, moments(sample), hist, l1_error(hist, rate, weighting),
                                 discrepancy(sample, rate), amp))
        except KMCError as exc:
            rows.append(SweepRow(eps, sample, None, histogram(sample.values, bin_width, num_bins),
                                 math.nan, math.nan, None, f"{type(exc).__name__}: {exc}"))
    return SweepReport(rows, rate, model_id, seed, initial_state, weighting, dict(header or {}))


SWEEP_COLUMNS = ["epsilon", "n", "mean", "mean_lo", "mean_hi", "var", "var_lo", "var_hi",
                 "l1", "discrepancy", "p_right", "p_left", "fail_frac"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _comment_lines(header: dict) -> str:
    return "".join(f"# {k} = {v}\n" for k, v in header.items())


def sweep_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    head = {"model": report.model_id, "seed": report.seed, "initial_state": report.initial_state,
            "limit_rate": _fmt(report.limit_rate), "l1_weighting": report.weighting}
    head.update(report.header)
    buf.write(_comment_lines(head))
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for row in report.rows:
        mo = row.moments
        amp = row.amplitude
        vals = [row.epsilon, row.sample.n,
                mo and mo.mean, mo and mo.ci95_mean[0], mo and mo.ci95_mean[1],
                mo and mo.variance, mo and mo.ci95_variance[0], mo and mo.ci95_variance[1],
                row.l1, row.discrepancy, amp and amp.p_right, amp and amp.p_left, row.fail_fraction]
        buf.write(",".join(_fmt(v) for v in vals) + "\n")
    return buf.getvalue()


def histogram_csv(hist: Histogram, header: dict | None = None) -> str:
    buf = io.StringIO()
    head = {"n_samples": hist.n_samples, "tail_mass": _fmt(hist.tail_mass)}
    head.update(header or {})
    buf.write(_comment_lines(head))
    buf.write("bin_lo,bin_hi,density\n")
    edges = hist.edges
    for i, d in enumerate(hist.densities):
        buf.write(f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{_fmt(d)}\n")
    return buf.getvalue()

"""End-to-end acceptance checks with pinned seeds and tolerances.

Each ``criterion_N`` returns a :class:`CriterionResult`; :func:`run_all`
runs them in order. ``mskmc validate`` and the test suite both call into
this module.
"""

from __future__ import annotations

import contextlib
import io
import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from . import cli, stats
from .ctmc import RngStream, simulate
from .effective import derive_energy, derive_ring, derive_two_macro, limit_process
from .errors import KMCError
from .modelfile import PRESETS, ModelDefinition, apply_overrides, definition_from_document, load_document
from .models import build_two_macro, tridiagonal
from .stationary import balance_residual, invariant_measure

REPLICAS = 10_000
EXACT_TOL = 1e-12
ORACLE_TOL = 1e-9
# 99th percentile of l1_error(riemann, dx=0.05, n=100) for 10^4 exact draws of
# the three limit laws was ~0.087 over 400 repetitions; 0.10 bounds all of them.
L1_NOISE_FLOOR = 0.10

SEEDS = {
    2: 20_250_102,
    3: 20_250_103,
    4: 20_250_104,
    5: 20_250_105,
    6: 20_250_106,
    7: 20_250_107,
    8: 20_250_108,
    9: 20_250_109,
    10: 20_250_110,
    11: 20_250_111,
}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    message: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        msg = f" -- {self.message}" if self.message else ""
        return f"[{status}] #{self.number} {self.name}: {shown}{msg} ({self.seconds:.1f}s)"

    def as_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "details": self.details, "message": self.message}


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


class _Presets:
    """Preset loader that can be pointed at a directory of replacement files."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None

    def load(self, name: str, **overrides) -> ModelDefinition:
        source = self.directory / f"{name}.toml" if self.directory else name
        _, doc = load_document(source)
        return definition_from_document(name, apply_overrides(doc, overrides))


def criterion_0(presets: _Presets) -> CriterionResult:
    details, errors = {}, []
    for name in PRESETS:
        try:
            presets.load(name)
            details[name] = "ok"
        except KMCError as exc:
            details[name] = type(exc).__name__
            errors.append(f"{name}: {type(exc).__name__}: {exc}")
    return CriterionResult(0, "preset construction", not errors, details, "; ".join(errors))


def criterion_1(presets: _Presets) -> CriterionResult:
    details, ok = {}, True
    for m in (3, 5, 7, 20):
        eff = derive_two_macro(presets.load("two-macro-s2.3", m=m).model)
        err = max(abs(eff.lambda0 - 2 / m), abs(eff.lambda1 - 2 / m))
        details[f"two_macro_m{m}_err"] = err
        ok &= err < EXACT_TOL
    ring = derive_ring(presets.load("ring-s3.2").model)
    details["ring_err"] = max(abs(ring.lambda_l - 0.2), abs(ring.lambda_r - 0.4))
    ok &= details["ring_err"] < EXACT_TOL
    energy = derive_energy(presets.load("energy-s4.3").model, 1.0)
    details["B10"] = energy.rate(1.0, 0.0)
    details["B10_err"] = abs(energy.rate(1.0, 0.0) - 6 / 11)
    ok &= details["B10_err"] < EXACT_TOL
    return CriterionResult(1, "effective-rate exactness", bool(ok), details)


def _two_macro_sample(presets: _Presets, epsilon: float, seed: int):
    defn = presets.load("two-macro-s2.3", m=5, x=0, z=0)
    return stats.sample_exit_times(defn.model, defn.initial_state, epsilon, REPLICAS, seed)


def criterion_2(presets: _Presets) -> CriterionResult:
    sample = _two_macro_sample(presets, 1e-3, SEEDS[2])
    mo = stats.moments(sample)
    mean_ok = abs(mo.mean - 2.5) < 4 * mo.sem
    var_ok = mo.ci95_variance[0] <= 6.25 <= mo.ci95_variance[1]
    return CriterionResult(2, "exit-time moment convergence", mean_ok and var_ok and sample.failures == 0, {
        "mean": mo.mean, "mean_z": (mo.mean - 2.5) / mo.sem, "var": mo.variance,
        "var_ci": [mo.ci95_variance[0], mo.ci95_variance[1]], "events": sample.events,
    })


def criterion_6(presets: _Presets) -> CriterionResult:
    details, ok = {}, True
    cases = {
        "two-macro": (derive_two_macro(presets.load("two-macro-s2.3", m=5).model), 0),
        "ring": (derive_ring(presets.load("ring-s3.2").model), 0),
        "energy": (derive_energy(presets.load("energy-s4.3").model, 1.0), 1.0),
    }
    threshold = stats.ks_threshold(REPLICAS)
    for k, (name, (eff, slow0)) in enumerate(cases.items()):
        lp = limit_process(eff)
        start = lp.index_of(slow0)
        sample = stats.sample_exit_times(lp, start, None, REPLICAS, SEEDS[6], stream_offset=k * stats.STREAM_BLOCK)
        rate = eff.exit_rate(slow0)
        ks = stats.discrepancy(sample, rate)
        l1 = stats.l1_error(stats.histogram(sample), rate)
        details[f"{name}_ks"] = ks
        details[f"{name}_l1"] = l1
        ok &= ks < threshold and l1 < L1_NOISE_FLOOR
    details["ks_threshold"] = threshold
    details["l1_floor"] = L1_NOISE_FLOOR
    return CriterionResult(6, "harness noise floor", bool(ok), details)


def criterion_3(presets: _Presets) -> CriterionResult:
    defn = presets.load("two-macro-s2.3", m=5, x=0, z=0)
    report = stats.sweep(defn.model, [1.0, 1e-1, 1e-2, 1e-3], REPLICAS, SEEDS[3], defn.initial_state)
    l1 = {row.epsilon: row.l1 for row in report.rows}
    ok = l1[1e-3] < l1[1.0] and l1[1e-3] < 3 * L1_NOISE_FLOOR and report.ok
    return CriterionResult(3, "L1-error decay", bool(ok),
                           {f"l1_eps={e:g}": v for e, v in l1.items()} | {"bound": 3 * L1_NOISE_FLOOR})


def criterion_4(presets: _Presets) -> CriterionResult:
    defn = presets.load("ring-s3.2")
    sample = stats.sample_exit_times(defn.model, defn.initial_state, 1e-3, REPLICAS, SEEDS[4])
    mo = stats.moments(sample)
    amp = stats.amplitude_law(sample)
    p0 = 2 / 3
    p_se = math.sqrt(p0 * (1 - p0) / amp.n)
    mean_se = float(np.std(sample.jumps, ddof=1)) / math.sqrt(amp.n)
    checks = {
        "exit_mean": abs(mo.mean - 5 / 3) < 4 * mo.sem,
        "p_right": abs(amp.p_right - p0) < 4 * p_se,
        "mean_dz": abs(amp.mean - 1 / 3) < 4 * mean_se,
    }
    return CriterionResult(4, "ring limit law", all(checks.values()) and sample.failures == 0, {
        "exit_mean": mo.mean, "exit_z": (mo.mean - 5 / 3) / mo.sem, "p_right": amp.p_right,
        "p_right_z": (amp.p_right - p0) / p_se, "mean_dz": amp.mean, "mean_dz_z": (amp.mean - 1 / 3) / mean_se,
    })


def criterion_5(presets: _Presets) -> CriterionResult:
    defn = presets.load("energy-s4.3")
    sample = stats.sample_exit_times(defn.model, defn.initial_state, 1e-3, REPLICAS, SEEDS[5])
    mo = stats.moments(sample)
    rate = 6 / 11
    ks = stats.discrepancy(sample, rate)
    threshold = stats.ks_threshold(REPLICAS)
    ok = abs(mo.mean - 11 / 6) < 4 * mo.sem and ks < threshold and sample.failures == 0
    return CriterionResult(5, "energy limit law", bool(ok), {
        "mean": mo.mean, "mean_z": (mo.mean - 11 / 6) / mo.sem, "ks": ks, "ks_threshold": threshold,
    })


def criterion_7(presets: _Presets) -> CriterionResult:
    defn = presets.load("two-macro-s2.3", m=5, x=0, z=0)
    rep = stats.martingale_residual(defn.model, 0.1, 5.0, REPLICAS, SEEDS[7], defn.initial_state)
    mo = rep.residual
    std = math.sqrt(mo.variance)
    mean_ok = abs(mo.mean) < 4 * std / math.sqrt(REPLICAS)
    rel = abs(mo.variance - rep.bracket_mean) / rep.bracket_mean
    return CriterionResult(7, "martingale residual", bool(mean_ok and rel < 0.15), {
        "mean": mo.mean, "mean_bound": 4 * std / math.sqrt(REPLICAS), "variance": mo.variance,
        "bracket_mean": rep.bracket_mean, "rel_diff": rel,
    })


def homogeneous_model(m: int = 5, q: float = 1.0, c: float = 1.0, epsilon: float = 1.0):
    """Two-macro model whose wells each couple to the mirrored well at rate ``c``,
    so every micro-state leaves its macro-state at the same total rate."""
    Q = tridiagonal(m, q)
    C = c * np.fliplr(np.eye(m))
    return build_two_macro(m, Q, Q, C, C, epsilon)


def criterion_8(presets: _Presets) -> CriterionResult:
    model = homogeneous_model()
    a = stats.sample_exit_times(model, 0, 1.0, REPLICAS, SEEDS[8])
    b = stats.sample_exit_times(model, 0, 1e-2, REPLICAS, SEEDS[8], stream_offset=stats.STREAM_BLOCK)
    d = stats.ks_two_sample(a, b)
    threshold = stats.ks_threshold(REPLICAS, REPLICAS)
    return CriterionResult(8, "homogeneous-coupling decoupling", d < threshold,
                           {"ks_2samp": d, "threshold": threshold})


def criterion_9(presets: _Presets) -> CriterionResult:
    model = presets.load("energy-s4.3").model.with_epsilon(1e-2)
    start = presets.load("energy-s4.3").initial_state
    chain = model.chain
    n = model.n_words
    e = model.energies
    violations = 0
    c_changes_missing = 0
    jumps = 0
    total0 = model.total_energy(start)
    for r in range(100):
        traj = simulate(chain, start, 50.0, RngStream(SEEDS[9], r))
        path = traj.path_states()
        x, z = path // n, path % n
        totals = e[x] + e[z]
        violations += int(np.count_nonzero(totals != total0))
        src, dst = path[:-1], path[1:]
        changed = e[x[1:]] != e[x[:-1]]
        # an energy change of particle 1 must be a coupling jump (no internal rate)
        c_changes_missing += int(np.count_nonzero(changed & (model.internal[src, dst] > 0)))
        jumps += traj.n_events
    ok = violations == 0 and c_changes_missing == 0
    return CriterionResult(9, "energy conservation", ok,
                           {"paths": 100, "jumps": jumps, "violations": violations,
                            "internal_energy_changes": c_changes_missing})


def random_irreducible(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random rates on ``dim`` states containing a random Hamiltonian cycle."""
    Q = rng.uniform(0.0, 2.0, size=(dim, dim)) * (rng.uniform(size=(dim, dim)) < 0.4)
    order = rng.permutation(dim)
    for a, b in zip(order, np.roll(order, -1)):
        Q[a, b] = rng.uniform(0.1, 2.0)
    np.fill_diagonal(Q, 0.0)
    return Q


def nullspace_measure(Q: np.ndarray) -> np.ndarray:
    """Invariant probability as the normalized left null vector of ``Q - Delta``."""
    gen = Q - np.diag(Q.sum(axis=1))
    ns = scipy.linalg.null_space(gen.T)
    if ns.shape[1] != 1:
        raise ValueError(f"null space has dimension {ns.shape[1]}")
    v = ns[:, 0]
    return v / v.sum()


def criterion_10(presets: _Presets) -> CriterionResult:
    rng = np.random.default_rng(SEEDS[10])
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 7))
        Q = random_irreducible(rng, dim) if dim > 1 else np.zeros((1, 1))
        worst = max(worst, float(np.max(np.abs(invariant_measure(Q) - nullspace_measure(Q)))))
    residuals = {}
    tm = presets.load("two-macro-s2.3").model
    residuals["two_macro_Q0"] = balance_residual(tm.Q0, invariant_measure(tm.Q0))
    residuals["two_macro_Q1"] = balance_residual(tm.Q1, invariant_measure(tm.Q1))
    rm = presets.load("ring-s3.2").model
    residuals["ring_Q"] = balance_residual(rm.Q, invariant_measure(rm.Q))
    em = presets.load("energy-s4.3").model
    for lv in em.levels:
        cls = em.energy_class(lv)
        residuals[f"energy_class_{lv:g}"] = balance_residual(em.Q, invariant_measure(em.Q, cls))
    ok = worst < ORACLE_TOL and max(residuals.values()) < EXACT_TOL
    return CriterionResult(10, "stationary-solver oracle", ok,
                           {"oracle_max_diff": worst, "max_residual": max(residuals.values())})


def criterion_11(presets: _Presets, workdir: Path | None = None) -> CriterionResult:
    model = (presets.directory / "two-macro-s2.3.toml") if presets.directory else "two-macro-s2.3"
    base = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="mskmc-det-"))
    outputs = []
    for run in ("a", "b"):
        out = base / run
        argv = ["sweep", "--model" if presets.directory else "--preset", str(model), "--m", "5",
                "--epsilons", "1", "0.1", "0.01", "--replicas", "2000", "--seed", str(SEEDS[11]),
                "--out", str(out)]
        with contextlib.redirect_stdout(io.StringIO()):
            code = cli.main(argv)
        files = sorted(p for p in out.iterdir() if p.suffix == ".csv")
        outputs.append((code, {p.name: p.read_bytes() for p in files}))
    (code_a, files_a), (code_b, files_b) = outputs
    same = files_a == files_b and len(files_a) == 4
    return CriterionResult(11, "sweep determinism", same and code_a == code_b == 0,
                           {"files": len(files_a), "identical": same})


CRITERIA: dict[int, Callable] = {
    0: criterion_0, 1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11,
}


def run_criterion(number: int, presets_dir=None, workdir: Path | None = None) -> CriterionResult:
    presets = _Presets(presets_dir)
    func = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        if number == 11:
            res = func(presets, workdir)
        else:
            res = func(presets)
    except KMCError as exc:
        res = CriterionResult(number, func.__name__, False, {"error": type(exc).__name__}, str(exc))
    res.seconds = time.perf_counter() - t0
    return res


def run_all(only=None, presets_dir=None, workdir: Path | None = None) -> list[CriterionResult]:
    numbers = sorted(CRITERIA) if only is None else sorted(only)
    if presets_dir is not None and 0 not in numbers:
        numbers = [0] + numbers
    results = []
    for k in numbers:
        results.append(run_criterion(k, presets_dir, workdir))
        if k == 0 and not results[-1].passed:
            # later criteria cannot build their models
            break
    return results


def results_json(results: list[CriterionResult]) -> str:
    return json.dumps([r.as_dict() for r in results], indent=2, sort_keys=True)

"""The three two-scale jump-process models and their constructors.

Every model is simulated in the slow time scale: internal (fast) rates are
multiplied by ``1/epsilon`` while coupling (slow) rates are used as given.

State enumerations
------------------
two-macro
    ``(x, z)`` with ``x in 0..m-1`` and ``z in {0, 1}`` has index ``z*m + x``.
ring
    ``(x, z)`` with ``z`` any integer has index ``x + m*zigzag(z)`` where
    zigzag maps ``0, -1, 1, -2, ...`` to ``0, 1, 2, 3, ...``.
energy
    A spin word ``(s_1, ..., s_k)`` has index ``sum_j s_j 2**(j-1)``; the
    pair ``(x, z)`` has index ``x * 2**k + z``. With ``k=2`` the words
    0, 1, 2, 3 are down-down, up-down, down-up, up-up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np

from .ctmc import IntensityMatrix, LatticeChain, Target, _check_rates
from .errors import BadDimension, ConfigError, EnergyNotConserved, NotIrreducible
from .stationary import is_irreducible


def _matrix(a, name: str, m: int | None = None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        raise BadDimension(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if m is not None and arr.shape[0] != m:
        raise BadDimension(f"{name} must be {m}x{m}, got {arr.shape}")
    _check_rates(arr, name)
    arr.setflags(write=False)
    return arr


def _internal(a, name: str, m: int | None = None) -> np.ndarray:
    arr = np.array(_matrix(a, name, m))
    np.fill_diagonal(arr, 0.0)
    arr.setflags(write=False)
    return arr


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ConfigError(f"epsilon must be positive and finite, got {epsilon!r}")
    return epsilon


def tridiagonal(m: int, q: float) -> np.ndarray:
    """Nearest-neighbour rates ``q`` on a path of ``m`` states, no wraparound."""
    return q * (np.eye(m, k=1) + np.eye(m, k=-1))


def corner(m: int, upper: float = 0.0, lower: float = 0.0) -> np.ndarray:
    """Matrix with ``upper`` at ``[0, m-1]`` and ``lower`` at ``[m-1, 0]``."""
    c = np.zeros((m, m))
    c[0, m - 1] += upper
    c[m - 1, 0] += lower
    return c


@dataclass(frozen=True, eq=False)
class TwoMacroModel:
    Q0: np.ndarray
    Q1: np.ndarray
    C01: np.ndarray
    C10: np.ndarray
    epsilon: float

    kind = "two-macro"

    @property
    def m(self) -> int:
        return self.Q0.shape[0]

    @property
    def n_states(self) -> int:
        return 2 * self.m

    @cached_property
    def chain(self) -> IntensityMatrix:
        inv = 1.0 / self.epsilon
        rates = np.block([[inv * self.Q0, self.C01], [self.C10, inv * self.Q1]])
        return IntensityMatrix(rates, name="Q^eps")

    def with_epsilon(self, epsilon: float) -> TwoMacroModel:
        return replace(self, epsilon=_check_epsilon(epsilon))

    def index(self, x: int, z: int) -> int:
        if not (0 <= x < self.m and z in (0, 1)):
            raise IndexError(f"({x},{z}) is not a state of the two-macro model")
        return z * self.m + x

    def decode(self, i: int) -> tuple[int, int]:
        self.chain.check_state(i)
        return int(i) % self.m, int(i) // self.m

    def label(self, i: int) -> str:
        x, z = self.decode(i)
        return f"({x},{z})"

    def slow_observable(self, i: int) -> int:
        return self.decode(i)[1]

    def exit_target(self, i: int) -> Target:
        z0 = self.slow_observable(i)
        return Target(mask=(np.arange(self.n_states) // self.m) != z0)

    def coupling_out(self) -> np.ndarray:
        """Total rate to the other macro-state, per state index."""
        return np.concatenate([self.C01.sum(axis=1), self.C10.sum(axis=1)])


@dataclass(frozen=True, eq=False)
class RingModel:
    Q: np.ndarray
    Cl: np.ndarray
    Cr: np.ndarray
    epsilon: float

    kind = "ring"

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @cached_property
    def chain(self) -> LatticeChain:
        return LatticeChain(self.Q / self.epsilon, self.Cl, self.Cr, name="ring")

    def with_epsilon(self, epsilon: float) -> RingModel:
        return replace(self, epsilon=_check_epsilon(epsilon))

    def index(self, x: int, z: int) -> int:
        return self.chain.encode(x, z)

    def decode(self, i: int) -> tuple[int, int]:
        return self.chain.decode(i)

    def label(self, i: int) -> str:
        x, z = self.decode(i)
        return f"({x},{z})"

    def slow_observable(self, i: int) -> int:
        return self.decode(i)[1]

    def exit_target(self, i: int) -> Target:
        return Target(leave_macro=True)


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Two particles of ``k`` spins exchanging energy on the slow scale.

    ``energies[x]`` is the energy of spin word ``x``. ``Q`` drives each
    particle independently and conserves its energy; ``C`` acts on pairs,
    conserves the total and changes the first particle's energy.
    """

    k: int
    energies: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    epsilon: float
    energy_tol: float = 0.0

    kind = "energy"

    @property
    def n_words(self) -> int:
        return 1 << self.k

    @property
    def n_states(self) -> int:
        return self.n_words**2

    @cached_property
    def internal(self) -> np.ndarray:
        """Pair-space internal rates: each particle moves alone under ``Q``."""
        n = self.n_words
        eye = np.eye(n)
        return np.kron(self.Q, eye) + np.kron(eye, self.Q)

    @cached_property
    def chain(self) -> IntensityMatrix:
        return IntensityMatrix(self.internal / self.epsilon + self.C, name="Q^eps")

    def with_epsilon(self, epsilon: float) -> EnergyModel:
        return replace(self, epsilon=_check_epsilon(epsilon))

    def same_energy(self, a: float, b: float) -> bool:
        return abs(a - b) <= self.energy_tol

    @cached_property
    def levels(self) -> list[float]:
        """Distinct single-particle energies, ascending."""
        out: list[float] = []
        for e in sorted(float(v) for v in self.energies):
            if not out or not self.same_energy(out[-1], e):
                out.append(e)
        return out

    def level_of(self, e: float) -> int | None:
        for i, lv in enumerate(self.levels):
            if self.same_energy(lv, e):
                return i
        return None

    def energy_class(self, e: float) -> list[int]:
        return [x for x in range(self.n_words) if self.same_energy(float(self.energies[x]), e)]

    def word(self, x: int) -> tuple[int, ...]:
        return tuple((x >> j) & 1 for j in range(self.k))

    def index(self, x: int, z: int) -> int:
        if not (0 <= x < self.n_words and 0 <= z < self.n_words):
            raise IndexError(f"({x},{z}) is not a pair state")
        return x * self.n_words + z

    def decode(self, i: int) -> tuple[int, int]:
        self.chain.check_state(i)
        return divmod(int(i), self.n_words)

    def label(self, i: int) -> str:
        x, z = self.decode(i)
        spins = lambda w: "".join(str(s) for s in self.word(w))
        return f"({spins(x)},{spins(z)})"

    def slow_observable(self, i: int) -> float:
        return float(self.energies[self.decode(i)[0]])

    def total_energy(self, i: int) -> float:
        x, z = self.decode(i)
        return float(self.energies[x] + self.energies[z])

    def exit_target(self, i: int) -> Target:
        e0 = self.slow_observable(i)
        xs = np.arange(self.n_states) // self.n_words
        return Target(mask=np.array([not self.same_energy(float(self.energies[x]), e0) for x in xs]))


MultiscaleModel = Union[TwoMacroModel, RingModel, EnergyModel]


def slow_observable(model: MultiscaleModel, state: int) -> float:
    """Macro label ``z`` (two-macro, ring) or first-particle energy (energy model)."""
    return model.slow_observable(state)


def build_two_macro(m: int, Q0, Q1, C01, C10, epsilon: float) -> TwoMacroModel:
    """Two macro-states of ``m`` micro-states with fast blocks ``Q0``, ``Q1``."""
    if int(m) < 1:
        raise BadDimension(f"m must be positive, got {m}")
    m = int(m)
    q0, q1 = _internal(Q0, "Q0", m), _internal(Q1, "Q1", m)
    c01, c10 = _matrix(C01, "C01", m), _matrix(C10, "C10", m)
    for name, q in (("Q0", q0), ("Q1", q1)):
        if not is_irreducible(q):
            raise NotIrreducible(f"{name} is not irreducible", block=name)
    return TwoMacroModel(q0, q1, c01, c10, _check_epsilon(epsilon))


def build_paper_two_macro(m: int, q: float = 1.0, c: float = 1.0, epsilon: float = 1.0) -> TwoMacroModel:
    """Nearest-neighbour wells in each macro-state, coupled through the end wells.

    ``Q`` is tridiagonal with rate ``q`` and no wraparound; ``C`` has the two
    corner entries ``C[0, m-1] = C[m-1, 0] = c``. Both macro-states share them.
    """
    if int(m) < 2:
        raise BadDimension(f"m must be at least 2, got {m}")
    Q = tridiagonal(int(m), q)
    C = corner(int(m), c, c)
    return build_two_macro(m, Q, Q, C, C, epsilon)


def build_ring(m: int, Q, Cl, Cr, epsilon: float) -> RingModel:
    m = int(m)
    if m < 1:
        raise BadDimension(f"m must be positive, got {m}")
    q = _internal(Q, "Q", m)
    if not is_irreducible(q):
        raise NotIrreducible("Q is not irreducible", block="Q")
    return RingModel(q, _matrix(Cl, "Cl", m), _matrix(Cr, "Cr", m), _check_epsilon(epsilon))


def build_paper_ring(m: int = 5, q: float = 1.0, c_l: float = 1.0, c_r: float = 2.0,
                     epsilon: float = 1.0) -> RingModel:
    """Tridiagonal wells; left coupling ``C_l[0, m-1]``, right coupling ``C_r[m-1, 0]``."""
    if int(m) < 2:
        raise BadDimension(f"m must be at least 2, got {m}")
    m = int(m)
    return build_ring(m, tridiagonal(m, q), corner(m, upper=c_l), corner(m, lower=c_r), epsilon)


def spin_sum(word: Sequence[int]) -> int:
    return sum(word)


def build_energy(k: int, energy: Callable[[tuple[int, ...]], float] | Sequence[float] | None,
                 Q, C, epsilon: float, energy_tol: float = 0.0) -> EnergyModel:
    """Validate conservation laws and assemble the two-particle model.

    ``energy`` is a function of the spin word, or the precomputed energies of
    the ``2**k`` words; ``None`` means the spin sum.
    """
    k = int(k)
    if k < 1:
        raise BadDimension(f"k must be positive, got {k}")
    n = 1 << k
    if energy is None:
        energy = spin_sum
    if callable(energy):
        energies = np.array([energy(tuple((x >> j) & 1 for j in range(k))) for x in range(n)], dtype=np.float64)
    else:
        energies = np.array(energy, dtype=np.float64)
        if energies.shape != (n,):
            raise BadDimension(f"need {n} word energies, got shape {energies.shape}")
    energies.setflags(write=False)
    q = _internal(Q, "Q", n)
    c = _matrix(C, "C", n * n)
    model = EnergyModel(k, energies, q, c, _check_epsilon(epsilon), float(energy_tol))

    for x, x2 in zip(*np.nonzero(q)):
        if not model.same_energy(energies[x], energies[x2]):
            raise EnergyNotConserved(
                f"Q[{x}][{x2}] > 0 joins energies {energies[x]} and {energies[x2]}", entry=(int(x), int(x2))
            )
    for a, b in zip(*np.nonzero(c)):
        (x, z), (x2, z2) = divmod(int(a), n), divmod(int(b), n)
        if not model.same_energy(energies[x] + energies[z], energies[x2] + energies[z2]):
            raise EnergyNotConserved(f"C[{a}][{b}] > 0 changes the total energy", entry=(int(a), int(b)))
        if model.same_energy(energies[x], energies[x2]):
            raise EnergyNotConserved(
                f"C[{a}][{b}] > 0 leaves the first particle's energy unchanged", entry=(int(a), int(b))
            )
    for e in model.levels:
        cls = model.energy_class(e)
        if len(cls) > 1 and not is_irreducible(q, cls):
            raise NotIrreducible(f"energy class {e:g} (words {cls}) is not irreducible",
                                 block=f"energy class {e:g}")
    return model


def paper_energy_coupling(energies: Sequence[float], special_word: int, c_special: float,
                          c_other: float) -> np.ndarray:
    """Pair coupling: every energy exchange allowed, rate ``c_special`` out of
    pairs whose first particle is ``special_word`` and ``c_other`` otherwise."""
    e = np.asarray(energies, dtype=np.float64)
    n = e.shape[0]
    C = np.zeros((n * n, n * n))
    for x in range(n):
        for z in range(n):
            rate = c_special if x == special_word else c_other
            for x2 in range(n):
                if e[x2] == e[x]:
                    continue
                for z2 in range(n):
                    if e[x] + e[z] == e[x2] + e[z2]:
                        C[x * n + z, x2 * n + z2] = rate
    return C


def build_paper_energy(epsilon: float = 1.0, q1: float = 10.0, q2: float = 1.0,
                       c1: float = 1.0, c2: float = 0.2) -> EnergyModel:
    """Two spins per particle with spin-sum energy.

    Internally only up-down <-> down-up moves happen (rates ``q1`` and
    ``q2``); the coupling rate is ``c1`` when the first particle is up-down
    and ``c2`` otherwise.
    """
    k = 2
    Q = np.zeros((4, 4))
    Q[1, 2] = q1
    Q[2, 1] = q2
    energies = [spin_sum(((x >> 0) & 1, (x >> 1) & 1)) for x in range(4)]
    C = paper_energy_coupling(energies, special_word=1, c_special=c1, c_other=c2)
    return build_energy(k, energies, Q, C, epsilon)

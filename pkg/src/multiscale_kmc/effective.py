"""Effective slow dynamics of the multiscale models in the limit epsilon -> 0.

In every case the slow rates are averages of the coupling rates against the
invariant measure of the fast dynamics; none of them depends on epsilon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Union

import numpy as np

from .ctmc import IntensityMatrix, LatticeChain, Target
from .errors import InadmissibleEnergy, NotIrreducible
from .models import EnergyModel, RingModel, TwoMacroModel
from .stationary import invariant_measure


@dataclass(frozen=True, eq=False)
class TwoMacroEffective:
    lambda0: float
    lambda1: float
    pi0: np.ndarray
    pi1: np.ndarray

    kind = "two-macro"

    def exit_rate(self, z: float) -> float:
        return self.lambda0 if int(z) == 0 else self.lambda1

    def as_dict(self) -> dict:
        return {"kind": self.kind, "lambda0": self.lambda0, "lambda1": self.lambda1,
                "pi0": self.pi0.tolist(), "pi1": self.pi1.tolist()}


@dataclass(frozen=True, eq=False)
class RingEffective:
    lambda_l: float
    lambda_r: float
    pi: np.ndarray

    kind = "ring"

    def exit_rate(self, z: float = 0) -> float:
        return self.lambda_l + self.lambda_r

    @property
    def p_right(self) -> float:
        return self.lambda_r / (self.lambda_l + self.lambda_r)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "lambda_l": self.lambda_l, "lambda_r": self.lambda_r,
                "p_right": self.p_right if self.exit_rate() > 0 else None, "pi": self.pi.tolist()}


@dataclass(frozen=True, eq=False)
class EnergyEffective:
    """Jump rates ``B[i, j]`` between admissible first-particle energy levels."""

    levels: list[float]
    B: np.ndarray
    total_energy: float
    pis: dict[float, np.ndarray] = field(default_factory=dict)

    kind = "energy"

    def level_index(self, e: float) -> int:
        for i, lv in enumerate(self.levels):
            if lv == e:
                return i
        raise InadmissibleEnergy(f"energy {e} is not an admissible level for total {self.total_energy}")

    def rate(self, e: float, e2: float) -> float:
        return float(self.B[self.level_index(e), self.level_index(e2)])

    def exit_rate(self, e: float) -> float:
        return float(self.B[self.level_index(e)].sum())

    def as_dict(self) -> dict:
        return {"kind": self.kind, "total_energy": self.total_energy, "levels": list(self.levels),
                "B": self.B.tolist(), "pi": {f"{e:g}": p.tolist() for e, p in self.pis.items()}}


EffectiveDynamics = Union[TwoMacroEffective, RingEffective, EnergyEffective]


def _pi(Q: np.ndarray, block: str) -> np.ndarray:
    try:
        return invariant_measure(Q)
    except NotIrreducible as exc:
        raise NotIrreducible(f"{block} is not irreducible", block=block) from exc


def derive_two_macro(model: TwoMacroModel) -> TwoMacroEffective:
    """``lambda_z = sum_x pi_z(x) sum_x' C_{z,1-z}(x, x')``."""
    pi0 = _pi(model.Q0, "Q0")
    pi1 = _pi(model.Q1, "Q1")
    lam0 = float(pi0 @ model.C01.sum(axis=1))
    lam1 = float(pi1 @ model.C10.sum(axis=1))
    return TwoMacroEffective(lam0, lam1, pi0, pi1)


def derive_ring(model: RingModel) -> RingEffective:
    pi = _pi(model.Q, "Q")
    return RingEffective(float(pi @ model.Cl.sum(axis=1)), float(pi @ model.Cr.sum(axis=1)), pi)


def admissible_levels(model: EnergyModel, total_energy: float) -> list[float]:
    """First-particle levels ``e`` for which some word has energy ``total - e``."""
    return [e for e in model.levels if model.level_of(total_energy - e) is not None]


def level_measures(model: EnergyModel) -> dict[float, np.ndarray]:
    """Invariant measure of ``Q`` on each energy class, zero elsewhere."""
    out = {}
    for e in model.levels:
        cls = model.energy_class(e)
        if len(cls) == 1:
            pi = np.zeros(model.n_words)
            pi[cls[0]] = 1.0
        else:
            try:
                pi = invariant_measure(model.Q, cls)
            except NotIrreducible as exc:
                raise NotIrreducible(str(exc), block=f"energy class {e:g}") from exc
        out[e] = pi
    return out


def derive_energy(model: EnergyModel, total_energy: float) -> EnergyEffective:
    """Level-to-level rates of the first particle's energy at fixed total energy.

    ``B(e, e')`` sums ``pi^e(x) pi^{E-e}(z) C((x,z),(x',z'))`` over pairs with
    ``E(x)=e, E(z)=E-e`` and ``E(x')=e', E(z')=E-e'``.
    """
    total_energy = float(total_energy)
    levels = admissible_levels(model, total_energy)
    if not levels:
        raise InadmissibleEnergy(f"no pair of words has total energy {total_energy}")
    pis = level_measures(model)
    n = model.n_words
    C = model.C.reshape(n, n, n, n)
    B = np.zeros((len(levels), len(levels)))
    for i, e in enumerate(levels):
        weight = np.outer(pis[e], pis[model.levels[model.level_of(total_energy - e)]])
        for j, e2 in enumerate(levels):
            if i == j:
                continue
            xs2 = model.energy_class(e2)
            zs2 = model.energy_class(model.levels[model.level_of(total_energy - e2)])
            to_level = C[:, :, xs2][:, :, :, zs2].sum(axis=(2, 3))
            B[i, j] = float(np.sum(weight * to_level))
    return EnergyEffective(levels, B, total_energy, pis)


@singledispatch
def derive(model, total_energy: float | None = None) -> EffectiveDynamics:
    raise TypeError(f"no effective dynamics for {type(model).__name__}")


@derive.register
def _(model: TwoMacroModel, total_energy=None):
    return derive_two_macro(model)


@derive.register
def _(model: RingModel, total_energy=None):
    return derive_ring(model)


@derive.register
def _(model: EnergyModel, total_energy=None):
    if total_energy is None:
        raise InadmissibleEnergy("the energy model needs a total energy")
    return derive_energy(model, total_energy)


@dataclass(frozen=True, eq=False)
class LimitProcess:
    """The limit slow process as a simulable chain.

    ``values[i]`` is the slow observable carried by local state ``i``: the
    macro label, or the energy level. For the ring limit the single local
    state carries the walk's position in the lattice coordinate.
    """

    chain: IntensityMatrix | LatticeChain
    values: list[float]

    def index_of(self, value: float) -> int:
        if isinstance(self.chain, LatticeChain):
            return self.chain.encode(0, int(value))
        return self.values.index(value)

    def slow_observable(self, i: int) -> float:
        if isinstance(self.chain, LatticeChain):
            return self.chain.decode(i)[1]
        return self.values[int(i)]

    def label(self, i: int) -> str:
        return f"{self.slow_observable(i):g}"

    def exit_target(self, i: int) -> Target:
        if isinstance(self.chain, LatticeChain):
            return Target(leave_macro=True)
        mask = np.ones(self.chain.dim, dtype=bool)
        mask[int(i)] = False
        return Target(mask=mask)


def limit_process(eff: EffectiveDynamics) -> LimitProcess:
    if isinstance(eff, TwoMacroEffective):
        chain = IntensityMatrix([[0.0, eff.lambda0], [eff.lambda1, 0.0]], name="limit")
        return LimitProcess(chain, [0, 1])
    if isinstance(eff, RingEffective):
        chain = LatticeChain([[0.0]], [[eff.lambda_l]], [[eff.lambda_r]], name="limit")
        return LimitProcess(chain, [])
    return LimitProcess(IntensityMatrix(eff.B, name="B"), list(eff.levels))


def report(eff: EffectiveDynamics) -> str:
    """JSON report of the derived rates and invariant measures."""
    return json.dumps(eff.as_dict(), indent=2, sort_keys=True)

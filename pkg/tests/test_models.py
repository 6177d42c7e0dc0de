import numpy as np
import pytest

from multiscale_kmc.ctmc import RngStream, simulate
from multiscale_kmc.errors import BadDimension, EnergyNotConserved, NegativeRate, NotIrreducible
from multiscale_kmc.models import (
    build_energy,
    build_paper_energy,
    build_paper_ring,
    build_paper_two_macro,
    build_ring,
    build_two_macro,
    corner,
    slow_observable,
    tridiagonal,
)

UP_DOWN, DOWN_UP, DOWN_DOWN, UP_UP = 1, 2, 0, 3


# -- two-macro ----------------------------------------------------------------

def test_single_micro_state_is_two_state_chain():
    model = build_two_macro(1, [[0]], [[0]], [[0.7]], [[0.7]], epsilon=0.1)
    assert np.array_equal(model.chain.rates, [[0.0, 0.7], [0.7, 0.0]])


def test_canonical_entries():
    model = build_paper_two_macro(5, 1.0, 1.0, epsilon=1.0)
    R = model.chain.rates
    assert R[model.index(0, 0), model.index(4, 1)] == 1.0
    assert R[model.index(0, 0), model.index(1, 0)] == 1.0


def test_small_epsilon_scales_internal_rates():
    model = build_paper_two_macro(5, 1.0, 1.0, epsilon=1e-3)
    assert model.chain.rates[model.index(0, 0), model.index(1, 0)] == pytest.approx(1000.0, rel=1e-15)


def test_coupling_has_two_corner_entries():
    model = build_paper_two_macro(3, q=1.0, c=2.5)
    assert np.count_nonzero(model.C01) == 2
    assert set(model.C01[model.C01 > 0]) == {2.5}


def test_m2_internal_is_symmetric_pair():
    assert np.array_equal(build_paper_two_macro(2).Q0, [[0.0, 1.0], [1.0, 0.0]])


def test_coupling_row_sums_only_at_ends():
    rows = build_paper_two_macro(20).C01.sum(axis=1)
    assert np.flatnonzero(rows).tolist() == [0, 19]


def test_block_structure_exact():
    eps = 0.02
    model = build_paper_two_macro(5, q=1.3, c=0.4, epsilon=eps)
    R = model.chain.rates
    m = model.m
    assert np.allclose(R[:m, :m], model.Q0 / eps, rtol=0, atol=0)
    assert np.array_equal(R[m:, m:], model.Q1 / eps)
    assert np.array_equal(R[:m, m:], model.C01)
    assert np.array_equal(R[m:, :m], model.C10)


def test_reducible_block_named():
    Q = np.zeros((3, 3))
    with pytest.raises(NotIrreducible) as info:
        build_two_macro(3, tridiagonal(3, 1.0), Q, corner(3, 1, 1), corner(3, 1, 1), 1.0)
    assert info.value.block == "Q1"


def test_negative_and_shape_errors():
    with pytest.raises(NegativeRate):
        build_two_macro(2, tridiagonal(2, 1), tridiagonal(2, 1), [[0, -1], [0, 0]], np.zeros((2, 2)), 1.0)
    with pytest.raises(BadDimension):
        build_two_macro(3, tridiagonal(2, 1), tridiagonal(3, 1), np.zeros((3, 3)), np.zeros((3, 3)), 1.0)
    with pytest.raises(BadDimension):
        build_paper_two_macro(1)
    with pytest.raises(ValueError):
        build_paper_two_macro(5, epsilon=0.0)


def test_state_enumeration_bijection():
    model = build_paper_two_macro(4)
    seen = {model.index(*model.decode(i)) for i in range(model.n_states)}
    assert seen == set(range(model.n_states))


# -- ring ----------------------------------------------------------------------

def test_ring_canonical_couplings():
    model = build_paper_ring()
    assert model.Cl[0, 4] == 1.0 and model.Cr[4, 0] == 2.0
    assert np.count_nonzero(model.Cl) == 1 and np.count_nonzero(model.Cr) == 1


def test_ring_without_coupling_never_leaves():
    model = build_ring(3, tridiagonal(3, 1.0), np.zeros((3, 3)), np.zeros((3, 3)), 0.5)
    traj = simulate(model.chain, model.index(1, 0), 100.0, RngStream(2))
    assert all(model.slow_observable(int(s)) == 0 for s in traj.states)


def test_ring_rates_translation_invariant():
    model = build_paper_ring(epsilon=0.25)
    ch = model.chain
    for x in range(model.m):
        ref = None
        for z in range(-20, 21):
            row = sorted((ch.decode(j)[0], ch.decode(j)[1] - z, r) for j, r in ch.row(ch.encode(x, z)).items())
            ref = ref or row
            assert row == ref
    assert ch.rate(model.index(0, 7), model.index(1, 7)) == 4.0


def test_ring_not_irreducible():
    with pytest.raises(NotIrreducible):
        build_ring(2, np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), 1.0)


# -- energy ----------------------------------------------------------------------

def test_energy_state_count_and_internal_rate():
    model = build_paper_energy(epsilon=0.1)
    assert model.n_states == 16
    R = model.chain.rates
    # (up-down, down-down) -> (down-up, down-down) at rate q1 / eps
    assert R[model.index(UP_DOWN, DOWN_DOWN), model.index(DOWN_UP, DOWN_DOWN)] == pytest.approx(100.0)


def test_energy_preset_internal_matrix():
    Q = build_paper_energy().Q
    assert np.all(Q[DOWN_DOWN] == 0) and np.all(Q[UP_UP] == 0)
    assert Q[UP_DOWN, DOWN_UP] == 10.0 and Q[DOWN_UP, UP_DOWN] == 1.0


def test_energy_coupling_entries():
    model = build_paper_energy()
    C = model.C
    assert C[model.index(UP_DOWN, DOWN_DOWN), model.index(DOWN_DOWN, UP_DOWN)] == 1.0
    assert C[model.index(DOWN_UP, DOWN_DOWN), model.index(DOWN_DOWN, DOWN_UP)] == 0.2


def test_energy_coupling_brute_force():
    """Re-enumerate the coupling rule over all 256 pair transitions."""
    model = build_paper_energy(c1=1.0, c2=0.2)
    e = [0, 1, 1, 2]
    for x in range(4):
        for z in range(4):
            for x2 in range(4):
                for z2 in range(4):
                    allowed = e[x] + e[z] == e[x2] + e[z2] and e[x] != e[x2]
                    want = (1.0 if x == UP_DOWN else 0.2) if allowed else 0.0
                    assert model.C[model.index(x, z), model.index(x2, z2)] == want


def test_zero_total_energy_is_absorbing():
    model = build_paper_energy(epsilon=0.01)
    s = model.index(DOWN_DOWN, DOWN_DOWN)
    assert model.chain.rates[s].sum() == 0.0
    assert simulate(model.chain, s, 5.0, RngStream(0)).absorbed


def test_conservation_violation_rejected():
    Q = build_paper_energy().Q
    C = np.zeros((16, 16))
    C[0, 1] = 1.0  # (0,0) -> (0,1) raises total energy
    with pytest.raises(EnergyNotConserved) as info:
        build_energy(2, None, Q, C, 1.0)
    assert info.value.entry == (0, 1)


def test_internal_energy_change_rejected():
    Q = np.zeros((4, 4))
    Q[0, 1] = 1.0
    with pytest.raises(EnergyNotConserved):
        build_energy(2, None, Q, np.zeros((16, 16)), 1.0)


def test_coupling_without_first_particle_change_rejected():
    C = np.zeros((16, 16))
    C[1 * 4 + 1, 2 * 4 + 2] = 1.0  # both particles swap up-down -> down-up, energies unchanged
    with pytest.raises(EnergyNotConserved):
        build_energy(2, None, build_paper_energy().Q, C, 1.0)


def test_reducible_energy_class_rejected():
    Q = np.zeros((4, 4))
    Q[1, 2] = 1.0
    with pytest.raises(NotIrreducible) as info:
        build_energy(2, None, Q, np.zeros((16, 16)), 1.0)
    assert "energy class 1" in info.value.block


def test_energy_conserved_along_paths():
    model = build_paper_energy(epsilon=0.05)
    n = model.n_words
    start = model.index(UP_DOWN, DOWN_UP)
    for r in range(20):
        path = simulate(model.chain, start, 30.0, RngStream(6, r)).path_states()
        x, z = path // n, path % n
        assert np.all(model.energies[x] + model.energies[z] == 2.0)
        changed = model.energies[x[1:]] != model.energies[x[:-1]]
        assert np.all(model.internal[path[:-1], path[1:]][changed] == 0.0)


# -- slow observable ---------------------------------------------------------------

def test_slow_observable_examples():
    tm = build_paper_two_macro(5)
    assert slow_observable(tm, tm.index(3, 1)) == 1
    ring = build_paper_ring()
    assert slow_observable(ring, ring.index(2, -4)) == -4
    en = build_paper_energy()
    assert slow_observable(en, en.index(UP_DOWN, DOWN_DOWN)) == 1.0


def test_labels():
    assert build_paper_two_macro(5).label(7) == "(2,1)"
    en = build_paper_energy()
    assert en.label(en.index(UP_DOWN, DOWN_DOWN)) == "(10,00)"

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiscale_kmc.ctmc import IntensityMatrix, LatticeChain
from multiscale_kmc.effective import (
    derive,
    derive_energy,
    derive_ring,
    derive_two_macro,
    limit_process,
    report,
)
from multiscale_kmc.errors import InadmissibleEnergy
from multiscale_kmc.models import (
    build_energy,
    build_paper_energy,
    build_paper_ring,
    build_paper_two_macro,
    build_ring,
    build_two_macro,
    corner,
    paper_energy_coupling,
    tridiagonal,
)


@pytest.mark.parametrize("m", [3, 5, 7, 20])
def test_two_macro_rate_is_two_c_over_m(m):
    eff = derive_two_macro(build_paper_two_macro(m, q=1.0, c=1.0))
    assert eff.lambda0 == pytest.approx(2 / m, abs=1e-12)
    assert eff.lambda1 == pytest.approx(2 / m, abs=1e-12)


def test_constant_row_sum_coupling():
    rng = np.random.default_rng(0)
    Q0 = rng.uniform(0.1, 2.0, (4, 4))
    C = np.diag([0.7] * 4)
    eff = derive_two_macro(build_two_macro(4, Q0, tridiagonal(4, 1), C, C, 1.0))
    assert eff.lambda0 == pytest.approx(0.7, abs=1e-14)


def test_ring_rates():
    eff = derive_ring(build_paper_ring())
    assert eff.lambda_l == pytest.approx(0.2, abs=1e-12)
    assert eff.lambda_r == pytest.approx(0.4, abs=1e-12)
    assert eff.p_right == pytest.approx(2 / 3)


def test_ring_without_left_coupling():
    m = build_ring(5, tridiagonal(5, 1), np.zeros((5, 5)), corner(5, lower=2.0), 1.0)
    assert derive_ring(m).lambda_l == 0.0


def test_ring_two_unit_entries_in_distinct_rows():
    Cr = np.zeros((5, 5))
    Cr[1, 3] = Cr[4, 0] = 1.0
    assert derive_ring(build_ring(5, tridiagonal(5, 1), np.zeros((5, 5)), Cr, 1.0)).lambda_r == pytest.approx(0.4)


def test_energy_rate_from_level_one():
    eff = derive_energy(build_paper_energy(), 1.0)
    assert eff.levels == [0.0, 1.0]
    assert eff.rate(1.0, 0.0) == pytest.approx(6 / 11, abs=1e-15)
    assert eff.exit_rate(1.0) == pytest.approx(6 / 11, abs=1e-15)


def brute_force_B(model, total, e_from, e_to, pis):
    """Direct quadruple sum over pair states."""
    n = model.n_words
    E = model.energies
    acc = 0.0
    for x in range(n):
        for z in range(n):
            if E[x] != e_from or E[z] != total - e_from:
                continue
            w = pis[E[x]][x] * pis[E[z]][z]
            for x2 in range(n):
                for z2 in range(n):
                    if E[x2] == e_to and E[z2] == total - e_to:
                        acc += w * model.C[x * n + z, x2 * n + z2]
    return acc


def test_energy_rates_match_brute_force():
    model = build_paper_energy()
    pis = {0.0: np.array([1, 0, 0, 0.0]), 1.0: np.array([0, 1 / 11, 10 / 11, 0]), 2.0: np.array([0, 0, 0, 1.0])}
    eff = derive_energy(model, 1.0)
    assert eff.rate(0.0, 1.0) == pytest.approx(brute_force_B(model, 1.0, 0.0, 1.0, pis), abs=1e-15)
    assert eff.rate(1.0, 0.0) == pytest.approx(brute_force_B(model, 1.0, 1.0, 0.0, pis), abs=1e-15)
    assert eff.rate(0.0, 1.0) == pytest.approx(0.4, abs=1e-15)


def test_energy_total_two_has_three_levels():
    eff = derive_energy(build_paper_energy(), 2.0)
    assert eff.levels == [0.0, 1.0, 2.0]
    assert np.all(np.diag(eff.B) == 0)


def test_energy_zero_total_is_frozen():
    eff = derive_energy(build_paper_energy(), 0.0)
    assert eff.levels == [0.0] and eff.B.shape == (1, 1) and eff.B[0, 0] == 0.0


def test_inadmissible_energy():
    with pytest.raises(InadmissibleEnergy):
        derive_energy(build_paper_energy(), 5.0)
    with pytest.raises(InadmissibleEnergy):
        derive(build_paper_energy())
    with pytest.raises(InadmissibleEnergy):
        derive_energy(build_paper_energy(), 1.0).rate(2.0, 0.0)


def test_derive_dispatch():
    assert derive(build_paper_ring()).kind == "ring"
    assert derive(build_paper_two_macro(5)).kind == "two-macro"
    assert derive(build_paper_energy(), 1.0).kind == "energy"
    with pytest.raises(TypeError):
        derive(object())


@pytest.mark.parametrize("build,extra", [
    (lambda eps: build_paper_two_macro(5, epsilon=eps), ()),
    (lambda eps: build_paper_ring(epsilon=eps), ()),
    (lambda eps: build_paper_energy(epsilon=eps), (1.0,)),
])
def test_epsilon_independence_bit_identical(build, extra):
    a = derive(build(1.0), *extra).as_dict()
    b = derive(build(1e-3), *extra).as_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([0.5, 2.0, 4.0, 0.25, 8.0]), st.integers(0, 10**6))
def test_scaling_covariance(s, seed):
    rng = np.random.default_rng(seed)
    m = 4
    Q = tridiagonal(m, 1.0) + rng.uniform(0, 1, (m, m)) * (1 - np.eye(m))
    C01, C10 = rng.uniform(0, 1, (m, m)), rng.uniform(0, 1, (m, m))
    a = derive_two_macro(build_two_macro(m, Q, Q, C01, C10, 1.0))
    b = derive_two_macro(build_two_macro(m, Q, Q, s * C01, s * C10, 1.0))
    # powers of two make the scaling exact in floating point
    assert b.lambda0 == s * a.lambda0 and b.lambda1 == s * a.lambda1
    Cl, Cr = rng.uniform(0, 1, (m, m)), rng.uniform(0, 1, (m, m))
    ra = derive_ring(build_ring(m, Q, Cl, Cr, 1.0))
    rb = derive_ring(build_ring(m, Q, s * Cl, s * Cr, 1.0))
    assert rb.lambda_l == s * ra.lambda_l and rb.lambda_r == s * ra.lambda_r
    en = build_paper_energy()
    E = en.energies
    C = paper_energy_coupling(E, 1, 1.0, 0.2)
    ea = derive_energy(build_energy(2, E, en.Q, C, 1.0), 1.0)
    eb = derive_energy(build_energy(2, E, en.Q, s * C, 1.0), 1.0)
    assert np.array_equal(eb.B, s * ea.B)


def test_limit_process_structures():
    lp = limit_process(derive_two_macro(build_paper_two_macro(20)))
    assert isinstance(lp.chain, IntensityMatrix)
    assert lp.chain.rates == pytest.approx(np.array([[0, 0.1], [0.1, 0]]))
    ring = limit_process(derive_ring(build_paper_ring()))
    assert isinstance(ring.chain, LatticeChain)
    start = ring.index_of(0)
    row = ring.chain.row(start)
    rates = {ring.slow_observable(j): r for j, r in row.items()}
    assert rates[1] == pytest.approx(0.4) and rates[-1] == pytest.approx(0.2)
    en = limit_process(derive_energy(build_paper_energy(), 1.0))
    assert en.chain.rates[en.index_of(1.0)].sum() == pytest.approx(6 / 11)


def test_report_is_json():
    doc = json.loads(report(derive_energy(build_paper_energy(), 1.0)))
    assert doc["B"][1][0] == pytest.approx(6 / 11)
    assert doc["pi"]["1"] == pytest.approx([0, 1 / 11, 10 / 11, 0])

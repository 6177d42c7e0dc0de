"""JIT-compiled inner loop of the jump-process simulator.

A chain is described by a CSR transition table over *local* states: for each
local state the outgoing (destination, macro shift, cumulative rate) triples.
Finite chains use shift 0 everywhere; translation-invariant chains on
``M x Z`` carry shifts of -1/0/+1.

Randomness is consumed from a caller-owned buffer of raw 64-bit words, two
words per jump (waiting time first, then target), so the Python reference
stepper and this kernel see the same uniform sequence.
"""

import numpy as np
from numba import njit

HIT = 0
HORIZON = 1
NEED_RNG = 2
ABSORBED = 3
BUDGET = 4
FULL = 5

_TWO_M52 = 2.0 ** -52


@njit(cache=True, nogil=True)
def open_uniform(word):
    # (k + 1/2) 2^-52 with k < 2^52: exact, strictly inside (0, 1)
    return (float(word >> np.uint64(12)) + 0.5) * _TWO_M52


@njit(cache=True, nogil=True)
def pick(indptr, cum, local, u):
    lo = indptr[local]
    hi = indptr[local + 1]
    threshold = u * cum[hi - 1]
    for k in range(lo, hi - 1):
        if threshold < cum[k]:
            return k
    return hi - 1


@njit(cache=True, nogil=True)
def advance(indptr, dest, shift, cum, stop_mask, stop_on_shift, z_ref,
            local, z, t, horizon, words, pos, n_events, max_events,
            out_t, out_local, out_z, n_out):
    """Run the chain until a stop condition; return the updated state.

    Returns ``(status, local, z, t, pos, n_events, n_out)``. The caller
    refills ``words`` on NEED_RNG and grows the output arrays on FULL, then
    calls again with the returned values.
    """
    record = out_t.shape[0] > 0
    n_words = words.shape[0]
    while True:
        lo = indptr[local]
        hi = indptr[local + 1]
        if hi == lo:
            return ABSORBED, local, z, t, pos, n_events, n_out
        if n_events >= max_events:
            return BUDGET, local, z, t, pos, n_events, n_out
        if pos + 2 > n_words:
            return NEED_RNG, local, z, t, pos, n_events, n_out
        if record and n_out >= out_t.shape[0]:
            return FULL, local, z, t, pos, n_events, n_out
        rate = cum[hi - 1]
        wait = -np.log(open_uniform(words[pos])) / rate
        if t + wait > horizon:
            # the draw is spent; the path is censored at the horizon
            return HORIZON, local, z, t, pos + 1, n_events, n_out
        k = pick(indptr, cum, local, open_uniform(words[pos + 1]))
        pos += 2
        t += wait
        local = dest[k]
        z += shift[k]
        n_events += 1
        if record:
            out_t[n_out] = t
            out_local[n_out] = local
            out_z[n_out] = z
            n_out += 1
        if stop_mask[local] or (stop_on_shift and z != z_ref):
            return HIT, local, z, t, pos, n_events, n_out

"""Metropolis annealing kernel for sparse QUBOs.

The hot loop is compiled with numba when it is available. All random draws
are generated up front by numpy so the trajectory depends only on the seed,
not on whether the kernel ran compiled or interpreted.
"""

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


@njit(cache=True, nogil=True)
def _coupling(nbr_ptr, nbr_idx, nbr_val, j, k):
    for p in range(nbr_ptr[j], nbr_ptr[j + 1]):
        if nbr_idx[p] == k:
            return nbr_val[p]
    return 0.0


@njit(cache=True, nogil=True)
def _flip(bits, field, nbr_ptr, nbr_idx, nbr_val, j):
    s = 1.0 - 2.0 * bits[j]
    bits[j] = 1 - bits[j]
    for p in range(nbr_ptr[j], nbr_ptr[j + 1]):
        field[nbr_idx[p]] += nbr_val[p] * s


@njit(cache=True, nogil=True)
def anneal_kernel(bits, linear, nbr_ptr, nbr_idx, nbr_val, group_start, group_size,
                  var_group, temps, prop_var, prop_pair, prop_partner, prop_accept,
                  pair_prob, energy):
    """Run one annealing trajectory in place on ``bits``.

    Proposal ``p`` flips variable ``prop_var[p]``; with probability
    ``pair_prob`` it also flips a second, uniformly chosen variable of the
    same one-hot group. Both proposal kinds are symmetric, so the chain
    targets the Boltzmann distribution of the full QUBO energy at each
    temperature. Returns ``(best_bits, best_energy)`` over the trajectory.
    """
    m = bits.shape[0]
    field = linear.copy()
    for j in range(m):
        if bits[j]:
            for p in range(nbr_ptr[j], nbr_ptr[j + 1]):
                field[nbr_idx[p]] += nbr_val[p]
    best = bits.copy()
    best_energy = energy
    n_sweeps = temps.shape[0]
    for s in range(n_sweeps):
        t = temps[s]
        for q in range(m):
            p = s * m + q
            j = prop_var[p]
            sj = 1.0 - 2.0 * bits[j]
            delta = sj * field[j]
            k = -1
            g = var_group[j]
            size = group_size[g]
            if prop_pair[p] < pair_prob and size > 1:
                r = prop_partner[p] % (size - 1)
                k = group_start[g] + r
                if k >= j:
                    k += 1
                sk = 1.0 - 2.0 * bits[k]
                delta += sk * field[k] + _coupling(nbr_ptr, nbr_idx, nbr_val, j, k) * sj * sk
            if delta <= 0.0 or prop_accept[p] < math.exp(-delta / t):
                _flip(bits, field, nbr_ptr, nbr_idx, nbr_val, j)
                if k >= 0:
                    _flip(bits, field, nbr_ptr, nbr_idx, nbr_val, k)
                energy += delta
                if energy < best_energy:
                    best_energy = energy
                    best[:] = bits
    return best, best_energy

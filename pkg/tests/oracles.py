"""Brute-force reference implementations shared by the test modules."""
import itertools

import numpy as np


def edit_distance_exhaustive(hyp, ref):
    """Minimum unit-cost edit distance by enumerating every alignment.

    An edit script is determined by which reference positions are paired
    (matched or substituted) with which hypothesis positions, in order; the
    unpaired ones are deletions and insertions. All such pairings are tried.
    """
    n, m = len(ref), len(hyp)
    if n == 0 or m == 0:
        return n + m
    mismatch = (np.asarray(ref)[:, None] != np.asarray(hyp)[None, :]).astype(int)
    best = n + m
    for k in range(1, min(n, m) + 1):
        R = np.array(list(itertools.combinations(range(n), k)))
        H = np.array(list(itertools.combinations(range(m), k)))
        subs = mismatch[R[:, None, :], H[None, :, :]].sum(axis=-1)
        best = min(best, int(subs.min()) + (n - k) + (m - k))
    return best


def best_assignment_brute(hyps, refs):
    S = len(hyps)
    return min((sum(edit_distance_exhaustive(hyps[s], refs[p[s]]) for s in range(S)), p)
               for p in itertools.permutations(range(S)))


def injection_brute(hyps, refs):
    return min((sum(edit_distance_exhaustive(hyps[inj[r]], refs[r]) for r in range(len(refs))), inj)
               for inj in itertools.permutations(range(len(hyps)), len(refs)))

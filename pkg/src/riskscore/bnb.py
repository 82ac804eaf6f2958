"""Node queue, regions and branching for the lattice search."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

INT_TOL = 1e-6

FREE = -1


@dataclass(eq=False)
class Region:
    """Box on λ plus fixings of α (and of auxiliary selectors).

    ``alpha_fix`` and ``aux_fix`` hold -1 (free), 0 or 1.
    """

    lam_lb: np.ndarray
    lam_ub: np.ndarray
    alpha_fix: np.ndarray
    aux_fix: np.ndarray

    @classmethod
    def root(cls, lam_lb, lam_ub, n_aux=0):
        d = len(lam_lb) - 1
        return cls(np.array(lam_lb, dtype=np.int64), np.array(lam_ub, dtype=np.int64),
                   np.full(d, FREE, dtype=np.int8), np.full(n_aux, FREE, dtype=np.int8))

    def copy(self):
        return Region(self.lam_lb.copy(), self.lam_ub.copy(), self.alpha_fix.copy(), self.aux_fix.copy())

    def empty(self):
        return bool(np.any(self.lam_lb > self.lam_ub))

    def contains(self, lam):
        """Whether an integer point (with α = 1[λ != 0]) lies in the region."""
        lam = np.asarray(lam)
        if np.any(lam < self.lam_lb) or np.any(lam > self.lam_ub):
            return False
        a = lam[1:] != 0
        fixed = self.alpha_fix != FREE
        return bool(np.all(a[fixed] == (self.alpha_fix[fixed] == 1)))

    def fix_alpha(self, j, value):
        """Fix α_j (j is 1-based); α_j = 0 collapses λ_j to 0, α_j = 1 drops 0 from a one-sided range."""
        self.alpha_fix[j - 1] = value
        if value == 0:
            self.lam_lb[j] = max(self.lam_lb[j], 0)
            self.lam_ub[j] = min(self.lam_ub[j], 0)
        else:
            if self.lam_lb[j] == 0:
                self.lam_lb[j] = 1
            if self.lam_ub[j] == 0:
                self.lam_ub[j] = -1
        return self

    def _sync_alpha(self, j):
        # a λ range that excludes 0 forces α_j = 1; {0} forces α_j = 0
        if j == 0:
            return
        if self.lam_lb[j] > 0 or self.lam_ub[j] < 0:
            self.alpha_fix[j - 1] = 1
        elif self.lam_lb[j] == 0 and self.lam_ub[j] == 0:
            self.alpha_fix[j - 1] = 0


@dataclass(eq=False)
class Node:
    region: Region
    v: float
    basis: object = None
    depth: int = 0
    seq: int = 0


class NodeQueue:
    """Best-bound priority queue, first-in-first-out among equal bounds."""

    def __init__(self):
        self._heap = []
        self._count = itertools.count()

    def __len__(self):
        return len(self._heap)

    def push(self, node):
        node.seq = next(self._count)
        heapq.heappush(self._heap, (node.v, node.seq, node))

    def min_bound(self):
        return self._heap[0][0] if self._heap else math.inf

    def nodes(self):
        return [e[2] for e in self._heap]


def remove_node(queue):
    """Pop the node with the smallest bound; None when the queue is empty."""
    if not queue._heap:
        return None
    return heapq.heappop(queue._heap)[2]


def prune(queue, V_max):
    """Drop every node with v >= V_max; returns how many were removed."""
    before = len(queue._heap)
    keep = [e for e in queue._heap if e[0] < V_max]
    if len(keep) != before:
        heapq.heapify(keep)
        queue._heap = keep
    return before - len(keep)


def _frac(v):
    return abs(v - round(v))


@dataclass(frozen=True)
class Branch:
    kind: str  # "alpha", "aux", "lambda", "nonzero"
    index: int
    value: float


def branching_decision(region, lam, alpha, aux=(), tol=INT_TOL):
    """Variable to split on, or None when (λ, α, aux) is integral and consistent.

    Order: most fractional α, then an α that is 1 while λ is 0 (or the
    reverse), then auxiliary selectors, then the most fractional λ.
    Ties go to the lowest index.
    """
    lam = np.asarray(lam)
    alpha = np.asarray(alpha)
    if alpha.size:
        fa = np.minimum(alpha - np.floor(alpha), np.ceil(alpha) - alpha)
        j = int(np.argmax(fa))
        if fa[j] > tol:
            return Branch("alpha", j + 1, float(alpha[j]))
        # α integral: check consistency with λ
        a_int = np.round(alpha)
        for j in range(alpha.size):
            lj = lam[j + 1]
            if a_int[j] == 1 and abs(lj) < 1 - tol:
                if region.alpha_fix[j] == FREE:
                    return Branch("alpha", j + 1, float(alpha[j]))
                return Branch("nonzero", j + 1, float(lj))
    aux = np.asarray(aux)
    if aux.size:
        fg = np.array([_frac(v) for v in aux])
        k = int(np.argmax(fg))
        if fg[k] > tol:
            return Branch("aux", k, float(aux[k]))
    fl = np.array([_frac(v) for v in lam])
    j = int(np.argmax(fl))
    if fl[j] > tol:
        return Branch("lambda", j, float(lam[j]))
    return None


def split_region(region, branch):
    """Two children covering every feasible integer point of the parent.

    Empty children are returned as None.
    """
    if branch is None:
        raise ValueError("cannot split on an integral solution")
    a, b = region.copy(), region.copy()
    j = branch.index
    if branch.kind == "alpha":
        a.fix_alpha(j, 0)
        b.fix_alpha(j, 1)
    elif branch.kind == "aux":
        a.aux_fix[j] = 0
        b.aux_fix[j] = 1
    elif branch.kind == "nonzero":
        # α_j = 1 is fixed, so λ_j = 0 is excluded
        a.lam_ub[j] = min(a.lam_ub[j], -1)
        b.lam_lb[j] = max(b.lam_lb[j], 1)
    elif branch.kind == "lambda":
        a.lam_ub[j] = min(a.lam_ub[j], math.floor(branch.value))
        b.lam_lb[j] = max(b.lam_lb[j], math.ceil(branch.value))
        a._sync_alpha(j)
        b._sync_alpha(j)
    else:
        raise ValueError(f"unknown branch kind {branch.kind!r}")
    return (None if a.empty() else a), (None if b.empty() else b)

"""Lattice cutting-plane search, the plain cutting-plane loop, bound propagation
and initialization."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bnb import Node, NodeQueue, Region, branching_decision, prune, remove_node, split_region
from .dataset import make_rng
from .heuristics import dcd_polish, sequential_round, subsampled_round
from .loss import LossEvaluator, loss_range
from .lp import DualSimplex, LinearProgram
from .problem import CoefficientSet, SolverBounds, is_feasible

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("wall_time_s", "nodes", "cuts", "V_min", "V_max", "gap", "event")

_CUT_TOL = 1e-10


# ---------------------------------------------------------------- options / results

@dataclass
class SolverOptions:
    """Stopping rules and heuristic cadence for lcpa_solve.

    Parameters
    ----------
    gap_tol : stop when 1 - V_min / V_max <= gap_tol
    polish_within : DCD polishes integer candidates with objective
        <= (1 + polish_within) * V_max
    round_on_bound : run sequential rounding on fractional LP solutions
        whenever V_min has improved since the last rounding
    subsample_fraction : if set, rounding runs on this fraction of the data
    """

    gap_tol: float = 0.0
    time_limit: float = math.inf
    node_limit: int = None
    polish: bool = True
    polish_within: float = 0.1
    round_on_bound: bool = True
    subsample_fraction: float = None
    subsample_delta: float = 0.05
    initialize: bool = True
    init_max_iter: int = 100
    init_time_limit: float = 60.0
    init_rel_tol: float = 1e-4
    init_window: int = 5
    chained: bool = True
    use_table: bool = True
    seed: int = 0
    trace_path: str = None

    def __post_init__(self):
        if not 0.0 <= self.gap_tol <= 1.0:
            raise ValueError("gap_tol must lie in [0, 1]")


@dataclass(eq=False)
class SolveResult:
    coefficients: np.ndarray
    objective: float
    lower_bound: float
    gap: float
    nodes: int
    cuts_added: int
    incumbent_updates: int
    wall_time: float
    status: str
    bounds: SolverBounds = None
    trace: list = field(default_factory=list)
    cut_pool: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    iterates: list = field(default_factory=list)
    iteration_times: list = field(default_factory=list)

    @property
    def V_max(self):
        return self.objective

    @property
    def V_min(self):
        return self.lower_bound


def optimality_gap(V_min, V_max):
    if not math.isfinite(V_max) or V_max <= 0:
        return 1.0
    return min(1.0, max(0.0, 1.0 - V_min / V_max))


# ---------------------------------------------------------------- bound propagation

def _floor_count(x):
    if not math.isfinite(x):
        return math.inf
    # tiny slack so rounding noise never removes a valid count
    return math.floor(x * (1 + 1e-10) + 1e-9)


def chained_updates(bounds, C0, max_rounds=100):
    """Propagate V, L and R bounds to a fixpoint.

    The caller checks ``bounds.crossed()``: crossing bounds mean the search
    region holds nothing better than the incumbent.
    """
    b = bounds
    for _ in range(max_rounds):
        V_min = max(b.V_min, b.L_min + C0 * b.R_min)
        V_max = min(b.V_max, b.L_max + C0 * b.R_max)
        L_min = max(b.L_min, V_min - C0 * b.R_max)
        L_max = min(b.L_max, V_max - C0 * b.R_min)
        R_max = b.R_max
        r = _floor_count((V_max - L_min) / C0)
        if r < R_max:
            R_max = max(int(r), b.R_min - 1) if r >= 0 else -1
        nb = SolverBounds(V_min, V_max, L_min, L_max, b.R_min, R_max)
        if nb == b:
            return nb
        b = nb
        if b.crossed():
            return b
    return b


def initial_bounds(spec):
    cc = spec.compiled
    box = CoefficientSet(cc.lam_lb, cc.lam_ub)
    L_min, L_max = loss_range(spec.data, box, cc.r_max)
    return SolverBounds(L_min, L_max + spec.C0 * cc.r_max, L_min, L_max, 0, cc.r_max)


# ---------------------------------------------------------------- trace

class Trace:
    """Progress rows (wall_time_s, nodes, cuts, V_min, V_max, gap, event)."""

    def __init__(self, path=None, header_lines=()):
        self.rows = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            for line in header_lines:
                self._fh.write(f"# {line}\n")
            self._w = csv.writer(self._fh)
            self._w.writerow(TRACE_COLUMNS)

    def add(self, t, nodes, cuts, V_min, V_max, event):
        row = (t, nodes, cuts, V_min, V_max, optimality_gap(V_min, V_max), event)
        self.rows.append(row)
        if self._fh is not None:
            self._w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_trace(path):
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for r in csv.DictReader(lines):
        rows.append((float(r["wall_time_s"]), int(r["nodes"]), int(r["cuts"]), float(r["V_min"]),
                     float(r["V_max"]), float(r["gap"]), r["event"]))
    return rows


# ---------------------------------------------------------------- surrogate LP

class SurrogateLP:
    """The LP relaxation over a region with the current cuts.

    Variables: λ_0..λ_d, α_1..α_d, auxiliary selectors, then L and R.
    Rows: indicator and operational rows, R = Σα, cuts. The objective
    L + C0·R is priced directly instead of through a V = L + C0·R row: a
    tiny C0 inside the constraint matrix gives badly scaled pivots, and V
    bounds add nothing that node pruning against the incumbent does not.
    """

    def __init__(self, spec, bounds, cuts=(), backend=None):
        cc = spec.compiled
        d = spec.d
        self.d, self.n_aux = d, cc.n_aux
        self.iA = d + 1
        self.iG = 2 * d + 1
        self.iL = 2 * d + 1 + cc.n_aux
        self.iR = self.iL + 1
        nv = self.iR + 1
        self.C0 = spec.C0
        lb = np.zeros(nv)
        ub = np.zeros(nv)
        lb[: d + 1] = cc.lam_lb
        ub[: d + 1] = cc.lam_ub
        ub[self.iA: self.iL] = 1.0
        lb[self.iL], ub[self.iL] = bounds.L_min, bounds.L_max
        lb[self.iR], ub[self.iR] = bounds.R_min, max(bounds.R_max, bounds.R_min)
        c = np.zeros(nv)
        c[self.iL] = 1.0
        c[self.iR] = spec.C0
        rows = cc.all_rows
        A = np.zeros((len(rows) + 1, nv))
        sense, rhs = [], []
        for i, r in enumerate(rows):
            for k, v in r.coefs.items():
                A[i, k] = v
            sense.append(r.relation)
            rhs.append(r.rhs)
        i = len(rows)
        A[i, self.iR] = 1.0
        A[i, self.iA: self.iG] = -1.0
        sense.append("=")
        rhs.append(0.0)
        self.solver = DualSimplex(LinearProgram(c, lb, ub, A, sense, rhs), backend=backend)
        self.lam_lb0 = cc.lam_lb
        self.lam_ub0 = cc.lam_ub
        self.n_cuts = 0
        for cut in cuts:
            self.add_cut(cut)

    def add_cut(self, cut):
        row = np.zeros(self.solver.n)
        row[: self.d + 1] = -cut.gradient
        row[self.iL] = 1.0
        self.solver.add_rows(row[None, :], (">=",), (cut.offset,))
        self.n_cuts += 1

    def set_region(self, region):
        s = self.solver
        s.lb[: self.d + 1] = region.lam_lb
        s.ub[: self.d + 1] = region.lam_ub
        fa = region.alpha_fix
        s.lb[self.iA: self.iG] = np.where(fa == 1, 1.0, 0.0)
        s.ub[self.iA: self.iG] = np.where(fa == 0, 0.0, 1.0)
        if self.n_aux:
            fg = region.aux_fix
            s.lb[self.iG: self.iL] = np.where(fg == 1, 1.0, 0.0)
            s.ub[self.iG: self.iL] = np.where(fg == 0, 0.0, 1.0)

    def set_bounds(self, b):
        s = self.solver
        s.lb[self.iL], s.ub[self.iL] = b.L_min, max(b.L_max, b.L_min)
        s.lb[self.iR], s.ub[self.iR] = b.R_min, max(b.R_max, b.R_min)

    def split(self, x):
        d = self.d
        return x[: d + 1], x[self.iA: self.iG], x[self.iG: self.iL], x[self.iL], x[self.iL] + self.C0 * x[self.iR]

    def solve(self, warm=None):
        return self.solver.solve(warm)


# ---------------------------------------------------------------- search state

class _Search:
    def __init__(self, spec, opts, trace):
        self.spec = spec
        self.opts = opts
        self.trace = trace
        self.t0 = time.perf_counter()
        cc = spec.compiled
        self.cc = cc
        self.box = CoefficientSet(cc.lam_lb, cc.lam_ub)
        self.ev = LossEvaluator(spec.data, self.box, r_max=cc.r_max, use_table=opts.use_table)
        self.C0 = spec.C0
        self.bounds = initial_bounds(spec)
        self.best = None
        self.best_obj = math.inf
        self.nodes = 0
        self.updates = 0
        self.cuts = []
        self.cut_keys = set()
        self.lp = None
        self.queue = NodeQueue()
        self.polished = set()
        self.rng = make_rng(opts.seed)
        self.time_cut = 0.0
        self.time_lp = 0.0
        self.time_heur = 0.0

    def elapsed(self):
        return time.perf_counter() - self.t0

    def record(self, event):
        self.trace.add(self.elapsed(), self.nodes, len(self.cuts), self.bounds.V_min,
                       self.best_obj, event)

    # cuts ------------------------------------------------------------
    def cut_at(self, lam):
        t = time.perf_counter()
        cut = self.ev.cut(lam)
        self.time_cut += time.perf_counter() - t
        return cut

    def add_cut(self, cut):
        key = np.asarray(cut.anchor).tobytes()
        if key in self.cut_keys:
            return False
        self.cut_keys.add(key)
        self.cuts.append(cut)
        if self.lp is not None:
            self.lp.add_cut(cut)
        return True

    # bounds ----------------------------------------------------------
    def push_bounds(self, V_min=None):
        b = self.bounds
        if V_min is not None and V_min > b.V_min:
            b = b.replace(V_min=min(V_min, self.best_obj))
        if self.best_obj < b.V_max:
            b = b.replace(V_max=self.best_obj)
        if self.opts.chained:
            b = chained_updates(b, self.C0)
        if b.V_min > self.best_obj:
            b = b.replace(V_min=self.best_obj)
        changed = b != self.bounds
        self.bounds = b
        if changed and self.lp is not None:
            self.lp.set_bounds(b)
        return changed

    # incumbents ------------------------------------------------------
    def objective(self, lam):
        lam = np.asarray(lam, dtype=np.int64)
        return self.ev.value(lam) + self.C0 * np.count_nonzero(lam[1:])

    def consider(self, lam, obj=None, polish=True):
        lam = np.asarray(lam, dtype=np.int64)
        if obj is None:
            ok, _ = is_feasible(lam, self.spec)
            if not ok:
                return False
            obj = self.objective(lam)
        improved = False
        ref = self.best_obj
        if obj < self.best_obj:
            self.best = lam.copy()
            self.best_obj = obj
            self.updates += 1
            improved = True
            prune(self.queue, self.best_obj)
            self.push_bounds()
            self.record("incumbent")
        if (polish and self.opts.polish and obj <= (1.0 + self.opts.polish_within) * ref
                and lam.tobytes() not in self.polished):
            self.polished.add(lam.tobytes())
            t = time.perf_counter()
            out = dcd_polish(lam, self.spec, evaluator=self.ev)
            self.time_heur += time.perf_counter() - t
            if not np.array_equal(out, lam):
                improved |= self.consider(out, polish=False)
        return improved

    def round_from(self, lam_real):
        t = time.perf_counter()
        opts = self.opts
        rho = np.clip(lam_real, self.cc.lam_lb, self.cc.lam_ub)
        if opts.subsample_fraction:
            m = max(1, int(round(opts.subsample_fraction * self.spec.data.n)))
            cand = subsampled_round(rho, self.spec, m, opts.subsample_delta, self.best_obj, rng=self.rng)
        else:
            cand = sequential_round(rho, self.spec, evaluator=self.ev)
        self.time_heur += time.perf_counter() - t
        if cand is not None:
            self.consider(cand)

    def zero_start(self):
        zero = np.zeros(self.spec.d + 1, dtype=np.int64)
        if is_feasible(zero, self.spec)[0]:
            self.best = zero
            self.best_obj = self.objective(zero)
            self.updates += 1
        self.push_bounds()


# ---------------------------------------------------------------- LCPA

def lcpa_solve(spec, options=None, trace=None):
    """Certifiably optimal risk score by lattice cutting planes.

    Parameters
    ----------
    spec : ProblemSpec
    options : SolverOptions
    trace : Trace, optional (one is created, or written to
        ``options.trace_path``, otherwise)

    Returns
    -------
    SolveResult
    """
    opts = options or SolverOptions()
    own_trace = trace is None
    trace = trace or Trace(opts.trace_path)
    S = _Search(spec, opts, trace)
    S.zero_start()
    S.record("start")

    if opts.initialize:
        initialize(spec, opts, search=S)
        S.record("init")

    S.lp = SurrogateLP(spec, S.bounds)
    for cut in S.cuts:
        S.lp.add_cut(cut)
    if not S.cuts:
        S.add_cut(S.cut_at(np.zeros(spec.d + 1)))
    S.lp.set_bounds(S.bounds)

    root = Region.root(S.cc.lam_lb, S.cc.lam_ub, S.cc.n_aux)
    S.queue.push(Node(root, S.bounds.V_min))
    status = None
    last_round = -math.inf
    while True:
        if len(S.queue) == 0:
            status = "queue exhausted"
            break
        if S.bounds.crossed() or S.bounds.V_min >= S.best_obj:
            S.queue = NodeQueue()
            status = "queue exhausted"
            break
        if optimality_gap(S.bounds.V_min, S.best_obj) <= opts.gap_tol:
            status = "gap reached"
            break
        if S.elapsed() >= opts.time_limit:
            status = "time limit"
            break
        if opts.node_limit is not None and S.nodes >= opts.node_limit:
            status = "node limit"
            break

        node = remove_node(S.queue)
        if node.v >= S.best_obj:
            continue
        S.lp.set_region(node.region)
        t = time.perf_counter()
        sol = S.lp.solve(node.basis)
        S.time_lp += time.perf_counter() - t
        S.nodes += 1
        while sol.optimal and sol.objective < S.best_obj:
            lam, alpha, aux, L, V = S.lp.split(sol.x)
            br = branching_decision(node.region, lam, alpha, aux)
            if br is None:
                lam_i = np.round(lam).astype(np.int64)
                new = lam_i.astype(np.float64).tobytes() not in S.cut_keys
                if new:
                    cut = S.cut_at(lam_i)
                    S.add_cut(cut)
                    if L < cut.value - _CUT_TOL * max(1.0, cut.value):
                        t = time.perf_counter()
                        sol = S.lp.solve(sol.basis)
                        S.time_lp += time.perf_counter() - t
                        continue
                    loss = cut.value
                else:
                    loss = S.ev.value(lam_i)
                obj = loss + S.C0 * np.count_nonzero(lam_i[1:])
                if is_feasible(lam_i, spec)[0]:
                    S.consider(lam_i, obj)
                else:  # pragma: no cover - rows and branching should prevent this
                    log.warning("integral LP point violates constraints: %s", lam_i)
                break
            if opts.round_on_bound and S.bounds.V_min > last_round:
                last_round = S.bounds.V_min
                S.round_from(lam)
            v = max(node.v, sol.objective)
            if v < S.best_obj:
                for child in split_region(node.region, br):
                    if child is not None:
                        S.queue.push(Node(child, v, sol.basis, node.depth + 1))
            break

        v_min = min(S.queue.min_bound(), S.best_obj)
        if v_min > S.bounds.V_min:
            S.push_bounds(v_min)
            S.record("bound")

    if status == "queue exhausted":
        S.push_bounds(S.best_obj)
        S.bounds = S.bounds.replace(V_min=S.best_obj)
    S.record("end")
    if own_trace:
        trace.close()
    wall = S.elapsed()
    res = SolveResult(
        coefficients=None if S.best is None else S.best.copy(),
        objective=S.best_obj,
        lower_bound=S.bounds.V_min,
        gap=optimality_gap(S.bounds.V_min, S.best_obj),
        nodes=S.nodes,
        cuts_added=len(S.cuts),
        incumbent_updates=S.updates,
        wall_time=wall,
        status=status if S.best is not None else "infeasible",
        bounds=S.bounds,
        trace=trace.rows,
        cut_pool=list(S.cuts),
        timings={"cut": S.time_cut, "lp": S.time_lp, "heuristics": S.time_heur, "total": wall},
    )
    return res


# ---------------------------------------------------------------- CPA

def _lp_relaxation_step(slp, warm):
    sol = slp.solve(warm)
    if not sol.optimal:
        return None
    return sol


def cpa_solve(spec, options=None, mode="lp", max_iter=100, time_limit=math.inf,
              iteration_time_limit=math.inf, rel_tol=1e-4, window=5, search=None, trace=None):
    """Plain cutting-plane loop.

    ``mode='lp'`` solves the relaxation over the convex hull of the lattice
    and returns its lower bound and the iterates. ``mode='mip'`` solves the
    surrogate integer program to optimality at every iteration.
    """
    opts = options or SolverOptions()
    own = search is None
    trace = trace or (search.trace if search is not None else Trace())
    S = search or _Search(spec, opts, trace)
    if own:
        S.zero_start()
    t_start = time.perf_counter()
    slp = SurrogateLP(spec, S.bounds)
    for cut in S.cuts:
        slp.add_cut(cut)
    prev_lp = S.lp
    S.lp = slp
    S.add_cut(S.cut_at(np.zeros(spec.d + 1)))
    root = Region.root(S.cc.lam_lb, S.cc.lam_ub, S.cc.n_aux)
    slp.set_region(root)
    iterates, lbs, it_times = [], [], []
    status = "iteration limit"
    warm = None
    lower = S.bounds.V_min
    for k in range(max_iter):
        if time.perf_counter() - t_start >= time_limit:
            status = "time limit"
            break
        t_it = time.perf_counter()
        if mode == "lp":
            t = time.perf_counter()
            sol = slp.solve(warm)
            S.time_lp += time.perf_counter() - t
            if not sol.optimal:
                status = "infeasible"
                break
            warm = sol.basis
            lam, alpha, aux, L, V = slp.split(sol.x)
            lam = lam.copy()
            val = sol.objective
        else:
            res = _surrogate_mip(slp, root, iteration_time_limit, S)
            it_times.append(time.perf_counter() - t_it)
            if res is None:
                status = "stalled"
                break
            lam, L, val = res
        lower = max(lower, val)
        lbs.append(lower)
        iterates.append(lam)
        cut = S.cut_at(lam)
        if mode == "mip":
            lam_i = np.round(lam).astype(np.int64)
            S.consider(lam_i, polish=False)
        S.push_bounds(lower)
        S.record("iteration")
        if L >= cut.value - 1e-9 * max(1.0, cut.value):
            status = "converged"
            break
        if mode == "mip" and optimality_gap(S.bounds.V_min, S.best_obj) <= opts.gap_tol:
            status = "gap reached"
            break
        S.add_cut(cut)
        if mode == "lp" and len(lbs) > window:
            old = lbs[-1 - window]
            if abs(lbs[-1] - old) <= rel_tol * max(abs(lbs[-1]), 1e-12):
                status = "stalled bound"
                break
    S.lp = prev_lp
    wall = time.perf_counter() - t_start
    return SolveResult(
        coefficients=None if S.best is None else S.best.copy(),
        objective=S.best_obj,
        lower_bound=lower if mode == "lp" else S.bounds.V_min,
        gap=optimality_gap(S.bounds.V_min, S.best_obj),
        nodes=S.nodes,
        cuts_added=len(S.cuts),
        incumbent_updates=S.updates,
        wall_time=wall,
        status=status,
        bounds=S.bounds,
        trace=trace.rows,
        cut_pool=list(S.cuts),
        iterates=iterates,
        iteration_times=it_times,
        timings={"cut": S.time_cut, "lp": S.time_lp},
    )


def _surrogate_mip(slp, root, time_cap, S):
    """Best-first branch-and-bound on the surrogate with a fixed cut set.

    Returns (λ, L, value) at the optimum, or None if the time cap is hit.
    """
    t0 = time.perf_counter()
    q = NodeQueue()
    q.push(Node(root, -math.inf))
    best, best_v, best_L = None, math.inf, None
    while len(q):
        if time.perf_counter() - t0 > time_cap:
            return None
        node = remove_node(q)
        if node.v >= best_v - 1e-12 * max(1.0, abs(best_v)):
            continue
        slp.set_region(node.region)
        t = time.perf_counter()
        sol = slp.solve(node.basis)
        S.time_lp += time.perf_counter() - t
        S.nodes += 1
        if not sol.optimal or sol.objective >= best_v - 1e-12 * max(1.0, abs(best_v)):
            continue
        lam, alpha, aux, L, V = slp.split(sol.x)
        br = branching_decision(node.region, lam, alpha, aux)
        if br is None:
            best, best_v, best_L = np.round(lam).astype(np.int64), sol.objective, L
            prune(q, best_v)
            continue
        for child in split_region(node.region, br):
            if child is not None:
                q.push(Node(child, sol.objective, sol.basis, node.depth + 1))
    if best is None:
        return None
    return best.astype(np.float64), best_L, best_v


# ---------------------------------------------------------------- initialization

def initialize(spec, options=None, search=None):
    """Warm start: LP-mode cutting planes, then rounding and polishing of the iterates.

    Returns (incumbent, cuts, bounds).
    """
    opts = options or SolverOptions()
    S = search
    if S is None:
        S = _Search(spec, opts, Trace())
        S.zero_start()
    res = cpa_solve(spec, opts, mode="lp", max_iter=opts.init_max_iter, time_limit=opts.init_time_limit,
                    rel_tol=opts.init_rel_tol, window=opts.init_window, search=S)
    S.push_bounds(res.lower_bound)
    t = time.perf_counter()
    seen = set()
    for rho in res.iterates:
        rho = np.clip(rho, S.cc.lam_lb, S.cc.lam_ub)
        lam = sequential_round(rho, spec, evaluator=S.ev)
        if lam.tobytes() in seen:
            continue
        seen.add(lam.tobytes())
        if not is_feasible(lam, spec)[0]:
            continue
        lam = dcd_polish(lam, spec, evaluator=S.ev)
        S.polished.add(lam.tobytes())
        S.consider(lam, polish=False)
    S.time_heur += time.perf_counter() - t
    S.push_bounds()
    return (None if S.best is None else S.best.copy()), list(S.cuts), S.bounds

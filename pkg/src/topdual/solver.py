"""Randomized two-coordinate dual ascent.

Each loop draws ``k`` uniformly from all ``n`` indices, evaluates the
closed-form step for every partner ``l``, and applies the one with the
largest exact objective gain.  With ``K`` precomputed a loop reads one
kernel column for the scan and one more for the update, so it costs O(n).
"""

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import surrogate as sg
from .exceptions import ShapeMismatch
from .problem import (A_DELTA, A_SUM_ALPHA, A_SUM_BETA_SQ, NEGNEG, P_K, PATMAT, POSNEG,
                      POSPOS, POSTOP, RULE_NAMES, TOPPUSHK, StepCandidate, capped_set,
                      dual_objective, step_kernel, topset_kernel)


@dataclass
class SolverConfig:
    max_loops: int = 20000
    seed: int = 0
    tolerance: float = None
    trace_every: int = 100
    score_refresh_every: int = 4096
    init: str = "uniform"
    topset_moves: bool = True

    def __post_init__(self):
        if self.max_loops < 1:
            raise ValueError("max_loops must be at least 1")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")
        if self.score_refresh_every < 1:
            raise ValueError("score_refresh_every must be at least 1")
        if self.init not in ("uniform", "zero"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self):
        return {
            "max_loops": self.max_loops,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "trace_every": self.trace_every,
            "score_refresh_every": self.score_refresh_every,
            "init": self.init,
            "topset_moves": self.topset_moves,
        }


@dataclass
class SolverState:
    """Dual iterate plus the caches that make a loop O(n).

    ``aux`` packs ``[sum(alpha), delta, sum(beta**2)]`` and ``top`` the
    indices of the three largest ``beta``; both are shared with the
    compiled kernels and updated in place.
    """

    alpha: np.ndarray
    beta: np.ndarray
    scores: np.ndarray
    aux: np.ndarray
    top: np.ndarray
    rng: np.random.Generator = field(repr=False)
    loop_count: int = 0

    @property
    def delta_mult(self):
        return float(self.aux[A_DELTA])

    @delta_mult.setter
    def delta_mult(self, value):
        self.aux[A_DELTA] = value

    @property
    def sum_alpha(self):
        return float(self.aux[A_SUM_ALPHA])

    @property
    def sum_beta_sq(self):
        return float(self.aux[A_SUM_BETA_SQ])

    @property
    def coefficients(self):
        return np.concatenate([self.alpha, self.beta])

    def copy(self):
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return SolverState(self.alpha.copy(), self.beta.copy(), self.scores.copy(),
                           self.aux.copy(), self.top.copy(), rng, self.loop_count)


@dataclass
class TraceEntry:
    loop: int
    time_s: float
    dual_obj: float
    primal_obj: float = None
    gap: float = None


@dataclass
class ConvergenceTrace:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def dual(self):
        return np.array([e.dual_obj for e in self.entries])

    def to_csv(self, fh):
        """Write ``loop,time_s,dual_obj[,primal_obj,gap]`` rows."""
        with_primal = any(e.primal_obj is not None for e in self.entries)
        header = "loop,time_s,dual_obj"
        if with_primal:
            header += ",primal_obj,gap"
        fh.write(header + "\n")
        for e in self.entries:
            row = f"{e.loop},{e.time_s:.6f},{e.dual_obj!r}"
            if with_primal:
                row += f",{_fmt(e.primal_obj)},{_fmt(e.gap)}"
            fh.write(row + "\n")


def _fmt(x):
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# compiled loop body


@njit(cache=True, nogil=True)
def refresh_top(beta, top):
    top[:] = -1
    v0 = v1 = v2 = -np.inf
    for idx in range(beta.shape[0]):
        b = beta[idx]
        if b > v0:
            top[2] = top[1]
            v2 = v1
            top[1] = top[0]
            v1 = v0
            top[0] = idx
            v0 = b
        elif b > v1:
            top[2] = top[1]
            v2 = v1
            top[1] = idx
            v1 = b
        elif b > v2:
            top[2] = idx
            v2 = b


@njit(cache=True, nogil=True)
def scan(k, colk, diag, s, par, alpha, beta, aux, top):
    """Best partner for ``k``; ties keep the smallest rule, then smallest ``l``."""
    n_pos = alpha.shape[0]
    n = s.shape[0]
    best_l = -1
    best = (0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    best_gain = 0.0
    sk = s[k]
    kk = diag[k]
    for l in range(n):
        if l == k:
            continue
        if k < n_pos:
            if l < n_pos:
                rule = POSPOS
                i = k
                j = l
            else:
                rule = POSNEG
                i = k
                j = l - n_pos
            si = sk
            sj = s[l]
            kii = kk
            kjj = diag[l]
        else:
            if l < n_pos:
                rule = POSNEG
                i = l
                j = k - n_pos
                si = s[l]
                sj = sk
                kii = diag[l]
                kjj = kk
            else:
                rule = NEGNEG
                i = k - n_pos
                j = l - n_pos
                si = sk
                sj = s[l]
                kii = kk
                kjj = diag[l]
        ok, lb, ub, gamma, d, nd, gain = step_kernel(
            rule, i, j, par, alpha, beta, aux, top, si, sj, kii, kjj, colk[l])
        if ok and gain > best_gain:
            best_gain = gain
            best_l = l
            best = (rule, i, j, lb, ub, gamma, d, nd, gain)
    return best_l, best


@njit(cache=True, nogil=True)
def apply_step(rule, i, j, d, nd, col_i, col_j, s, par, alpha, beta, aux, top):
    """Apply a step; ``col_i``/``col_j`` are the kernel columns of the two
    moved coordinates."""
    n = s.shape[0]
    if rule == POSPOS:
        alpha[i] += d
        alpha[j] -= d
        for t in range(n):
            s[t] += (col_i[t] - col_j[t]) * d
        return
    if rule == POSNEG:
        bj = beta[j]
        alpha[i] += d
        beta[j] = bj + d
        aux[A_SUM_ALPHA] += d
        aux[A_SUM_BETA_SQ] += d * (2.0 * bj + d)
        for t in range(n):
            s[t] += (col_i[t] + col_j[t]) * d
    else:
        bi = beta[i]
        bj = beta[j]
        beta[i] = bi + d
        beta[j] = bj - d
        aux[A_SUM_BETA_SQ] += d * (2.0 * (bi - bj) + 2.0 * d)
        for t in range(n):
            s[t] += (col_i[t] - col_j[t]) * d
    if aux[A_SUM_BETA_SQ] < 0.0:
        aux[A_SUM_BETA_SQ] = 0.0
    aux[A_DELTA] = nd
    refresh_top(beta, top)


@njit(cache=True, nogil=True)
def apply_topset(i, T, m, j, d, col_i, Kmat, s, par, alpha, beta, aux, top):
    """Apply ``alpha_i += d``, ``beta_T += d/K`` and ``beta_j += (1 - m/K) d``."""
    n_pos = alpha.shape[0]
    n = s.shape[0]
    r = 1.0 / par[P_K]
    alpha[i] += d
    aux[A_SUM_ALPHA] += d
    for t in range(n):
        s[t] += col_i[t] * d
    for a in range(m + (1 if j >= 0 else 0)):
        if a < m:
            jj = T[a]
            dj = d * r
        else:
            jj = j
            dj = d * (1.0 - m * r)
        bj = beta[jj]
        beta[jj] = bj + dj
        aux[A_SUM_BETA_SQ] += dj * (2.0 * bj + dj)
        col = Kmat[n_pos + jj]
        for t in range(n):
            s[t] += col[t] * dj
    if aux[A_SUM_BETA_SQ] < 0.0:
        aux[A_SUM_BETA_SQ] = 0.0
    refresh_top(beta, top)


@njit(cache=True, nogil=True)
def _largest_neg_scores(s, n_pos, out):
    m = out.shape[0]
    n_neg = s.shape[0] - n_pos
    if m > n_neg:
        return 0
    order = np.argsort(s[n_pos:], kind="mergesort")
    for a in range(m):
        out[a] = order[a]
    return m


@njit(cache=True, nogil=True)
def topset_scan(k, colk, Kmat, s, par, alpha, beta, aux, work, best_gain):
    """Capped-set candidate for positive ``k`` if it beats ``best_gain``.

    ``work`` is an index buffer of length ``K``; an empty buffer disables
    the move.  Returns ``(m, j, lb, ub, gamma, step, gain)`` with ``m = 0``
    when there is no better candidate.
    """
    Kp = par[P_K]
    if work.shape[0] < 2 or k >= alpha.shape[0]:
        return 0, -1, 0.0, 0.0, 0.0, 0.0, 0.0
    if aux[A_SUM_ALPHA] <= 0.0:
        # zero state: every beta is on the (zero) cap; pick the K negatives
        # with the largest primal scores -s, the first ones to become active
        m = _largest_neg_scores(s, alpha.shape[0], work)
    else:
        m = capped_set(beta, aux[A_SUM_ALPHA] / Kp, Kp, work)
    if m < 1:
        return 0, -1, 0.0, 0.0, 0.0, 0.0, 0.0
    ok, j, lb, ub, g, d, gain = topset_kernel(k, work, m, colk, Kmat, s, par, alpha, beta, aux)
    if not ok or not gain > best_gain:
        return 0, -1, 0.0, 0.0, 0.0, 0.0, 0.0
    return m, j, lb, ub, g, d, gain


@njit(cache=True, nogil=True)
def run_block(Kmat, diag, ks, s, par, alpha, beta, aux, top, tol, work):
    """Run one loop per entry of ``ks``; stops early once the best gain
    falls below ``tol`` (pass a negative ``tol`` to disable)."""
    n_pos = alpha.shape[0]
    for t in range(ks.shape[0]):
        k = ks[t]
        colk = Kmat[k]
        best_l, best = scan(k, colk, diag, s, par, alpha, beta, aux, top)
        gain = best[8]
        m, j, _, _, _, d, tg = topset_scan(k, colk, Kmat, s, par, alpha, beta, aux, work,
                                            max(gain, 0.0))
        if m > 0:
            apply_topset(k, work, m, j, d, colk, Kmat, s, par, alpha, beta, aux, top)
            gain = tg
        elif best_l >= 0:
            rule = best[0]
            i = best[1]
            j = best[2]
            gi, gj = _global(rule, i, j, n_pos)
            apply_step(rule, i, j, best[6], best[7], Kmat[gi], Kmat[gj],
                       s, par, alpha, beta, aux, top)
        if gain < tol:
            return t + 1, True
    return ks.shape[0], False


@njit(cache=True, nogil=True)
def scan_block(Kmat, diag, ks, s, par, alpha, beta, aux, top):
    # timing helper: candidate scans only, state untouched
    acc = 0.0
    for t in range(ks.shape[0]):
        k = ks[t]
        best_l, best = scan(k, Kmat[k], diag, s, par, alpha, beta, aux, top)
        acc += best[8]
    return acc


@njit(cache=True, nogil=True)
def _global(rule, i, j, n_pos):
    if rule == POSPOS:
        return i, j
    if rule == POSNEG:
        return i, n_pos + j
    return n_pos + i, n_pos + j


# ---------------------------------------------------------------------------


def optimal_delta(problem, beta, n):
    """PatMat's delta maximizing the dual for fixed ``beta``."""
    s2 = problem.surrogate_neg
    if beta.size == 0:
        return 0.0
    if s2.family == sg.HINGE:
        return float(beta.max()) / s2.theta
    return float(np.sqrt(np.sum(beta * beta) / (4.0 * s2.theta**2 * n * problem.tau)))


def initialize(problem, K, config=None, alpha=None, beta=None):
    """Feasible starting point.

    The uniform start sets ``alpha_i = c`` and ``beta_j = c n_pos / n_neg``
    with ``c = C*theta/2`` for hinge and ``c = 1`` for the quadratic
    surrogate; PatMat's ``delta`` is then set to its optimum.  Explicit
    ``alpha``/``beta`` override the start.
    """
    config = config or SolverConfig()
    n_pos, n_neg = K.n_pos, K.n_neg
    n = n_pos + n_neg
    problem.params(n_pos, n_neg)
    s1 = problem.surrogate_pos
    if alpha is None or beta is None:
        if config.init == "zero":
            alpha = np.zeros(n_pos)
            beta = np.zeros(n_neg)
        else:
            c = problem.C * s1.theta / 2 if s1.family == sg.HINGE else 1.0
            alpha = np.full(n_pos, c)
            beta = np.full(n_neg, c * n_pos / n_neg)
    alpha = np.array(alpha, dtype=float)
    beta = np.array(beta, dtype=float)
    if alpha.shape != (n_pos,) or beta.shape != (n_neg,):
        raise ShapeMismatch(
            f"alpha/beta shapes {alpha.shape}/{beta.shape} do not match "
            f"n_pos={n_pos}, n_neg={n_neg}")
    delta = optimal_delta(problem, beta, n) if problem.kind == PATMAT else 0.0
    scores = K.matvec(np.concatenate([alpha, beta]))
    aux = np.array([alpha.sum(), delta, np.sum(beta * beta)])
    top = np.full(3, -1, dtype=np.int64)
    refresh_top(beta, top)
    return SolverState(alpha, beta, scores, aux, top, np.random.default_rng(config.seed))


def refresh(K, state):
    """Recompute the score vector and scalar caches from scratch."""
    state.scores[:] = K.matvec(state.coefficients)
    state.aux[A_SUM_ALPHA] = state.alpha.sum()
    state.aux[A_SUM_BETA_SQ] = np.sum(state.beta * state.beta)
    refresh_top(state.beta, state.top)


def topset_buffer(problem, config=None):
    """Index buffer enabling the capped-set move (empty when it does not apply)."""
    config = config or SolverConfig()
    if problem.kind == TOPPUSHK and problem.K >= 2 and config.topset_moves:
        return np.empty(int(problem.K), dtype=np.int64)
    return np.empty(0, dtype=np.int64)


def run_loop(problem, K, state, k=None, config=None):
    """One iteration; returns the applied step or ``None`` if no move from
    ``k`` improves the objective (the state is then unchanged)."""
    par = problem.params(K.n_pos, K.n_neg)
    n = K.n
    if k is None:
        k = int(state.rng.integers(0, n))
    colk = K.column(k)
    best_l, best = scan(k, colk, K.diag, state.scores, par, state.alpha,
                        state.beta, state.aux, state.top)
    state.loop_count += 1
    work = topset_buffer(problem, config)
    m, j, lb, ub, gamma, d, tg = topset_scan(k, colk, np.asarray(K.entries), state.scores,
                                             par, state.alpha, state.beta, state.aux, work,
                                             max(best[8], 0.0))
    if m > 0:
        T = work[:m].copy()
        r = 1.0 / problem.K
        state.scores += d * colk
        for t in T:
            state.scores += (d * r) * K.column(K.n_pos + t)
        state.beta[T] += d * r
        if j >= 0:
            state.scores += d * (1.0 - m * r) * K.column(K.n_pos + j)
            state.beta[j] += d * (1.0 - m * r)
        state.alpha[k] += d
        state.aux[A_SUM_ALPHA] = state.alpha.sum()
        state.aux[A_SUM_BETA_SQ] = np.sum(state.beta * state.beta)
        refresh_top(state.beta, state.top)
        l = K.n_pos + j if j >= 0 else -1
        return StepCandidate(RULE_NAMES[POSTOP], k, l, lb, ub, gamma, d, 0.0, tg)
    if best_l < 0:
        return None
    rule, i, j, lb, ub, gamma, d, nd, gain = best
    gi, gj = _global(rule, i, j, K.n_pos)
    col_l = K.column(best_l)
    col_i, col_j = (colk, col_l) if gi == k else (col_l, colk)
    apply_step(rule, i, j, d, nd, col_i, col_j, state.scores, par,
               state.alpha, state.beta, state.aux, state.top)
    return StepCandidate(RULE_NAMES[rule], gi, gj, lb, ub, gamma, d, nd, gain)


def solve(problem, K, config=None, gap_evaluator=None, state=None):
    """Run the coordinate ascent.

    Parameters
    ----------
    gap_evaluator : callable, optional
        ``gap_evaluator(state) -> primal objective``; evaluated at every
        trace point, adding ``primal_obj`` and ``gap`` to the trace.
    state : SolverState, optional
        Warm start; defaults to :func:`initialize`.

    Returns
    -------
    state : SolverState
    trace : ConvergenceTrace
    """
    config = config or SolverConfig()
    par = problem.params(K.n_pos, K.n_neg)
    if state is None:
        state = initialize(problem, K, config)
    Kmat = np.asarray(K.entries)
    diag = K.diag
    n = K.n
    tol = -1.0 if config.tolerance is None else float(config.tolerance)
    work = topset_buffer(problem, config)
    trace = ConvergenceTrace()
    t0 = time.perf_counter()
    done = 0
    while done < config.max_loops:
        m = min(config.trace_every - done % config.trace_every,
                config.score_refresh_every - state.loop_count % config.score_refresh_every,
                config.max_loops - done)
        ks = state.rng.integers(0, n, size=m)
        executed, stopped = run_block(Kmat, diag, ks, state.scores, par, state.alpha,
                                      state.beta, state.aux, state.top, tol, work)
        done += executed
        state.loop_count += executed
        if state.loop_count % config.score_refresh_every == 0:
            refresh(K, state)
        if stopped or done % config.trace_every == 0 or done == config.max_loops:
            _record(trace, problem, K, state, t0, gap_evaluator)
        if stopped:
            break
    return state, trace


def _record(trace, problem, K, state, t0, gap_evaluator):
    elapsed = time.perf_counter() - t0
    dual = dual_objective(problem, K, state, check=False)
    entry = TraceEntry(state.loop_count, elapsed, dual)
    if gap_evaluator is not None:
        primal = float(gap_evaluator(state))
        entry.primal_obj = primal
        entry.gap = primal - dual
    trace.entries.append(entry)


"""Dual problems, feasibility, and closed-form two-coordinate steps.

All three classifiers share the dual

    max  -1/2 v^T K v - C sum l1*(alpha_i / C) [- delta sum l2*(beta_j/delta) - delta n tau]
    s.t. sum alpha = sum beta, plus problem specific bounds,

with ``v = [alpha; beta]``.  A step moves two coordinates along one of

    pospos  alpha_i += D, alpha_j -= D    direction e_i - e_j
    posneg  alpha_i += D, beta_j  += D    direction e_i + e_j
    negneg  beta_i  += D, beta_j  -= D    direction e_i - e_j

which keeps ``sum alpha = sum beta``.  Along such a line the objective is
``-B*D - A*D^2/2``, hence the optimal step is ``clip(-B/A, lb, ub)``.
PatMat rules that move ``beta`` re-optimize ``delta`` for the new
``beta``, which adds a concave term: piecewise linear in the largest
``beta`` for the hinge and ``-sqrt(n tau sum(beta^2))/theta2`` for the
quadratic surrogate.  The scalar kernels below are compiled with numba
because the solver calls them ``n`` times per iteration.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import surrogate as sg
from .exceptions import DegenerateDenominator, InfeasibleConfig, InfeasibleState
from .surrogate import SurrogateSpec

TOPPUSHK = "toppushk"
PATMAT = "patmat"

POSPOS, POSNEG, NEGNEG, POSTOP = 0, 1, 2, 3
RULE_NAMES = ("pospos", "posneg", "negneg", "postop")

FEAS_TOL = 1e-9
DEGENERATE_DENOM = 1e-14
# relative slack for deciding that a beta sits on its cap sum(alpha)/K
CAP_TOL = 1e-12

# layout of the parameter vector handed to the compiled kernels
P_KIND, P_K, P_C, P_FAM1, P_TH1, P_FAM2, P_TH2, P_NTAU = range(8)
# layout of the per-state scalar cache
A_SUM_ALPHA, A_DELTA, A_SUM_BETA_SQ = range(3)


@dataclass(frozen=True)
class ProblemSpec:
    """Which classifier to train.

    ``kind`` is ``"toppushk"`` (TopPush is ``K=1``) or ``"patmat"``.
    ``surrogate_neg`` only matters for PatMat.
    """

    kind: str = TOPPUSHK
    C: float = 1.0
    K: int = 1
    tau: float = 0.05
    surrogate_pos: SurrogateSpec = field(default_factory=SurrogateSpec)
    surrogate_neg: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        if self.kind not in (TOPPUSHK, PATMAT):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if self.kind == TOPPUSHK and (int(self.K) != self.K or self.K < 1):
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if self.kind == PATMAT and not 0 < self.tau < 1:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")

    @classmethod
    def toppush(cls, C=1.0, surrogate=None):
        return cls(TOPPUSHK, C=C, K=1, surrogate_pos=surrogate or SurrogateSpec())

    @classmethod
    def toppushk(cls, K, C=1.0, surrogate=None):
        return cls(TOPPUSHK, C=C, K=K, surrogate_pos=surrogate or SurrogateSpec())

    @classmethod
    def patmat(cls, tau, C=1.0, surrogate=None, surrogate_neg=None):
        s1 = surrogate or SurrogateSpec()
        return cls(PATMAT, C=C, tau=tau, surrogate_pos=s1, surrogate_neg=surrogate_neg or s1)

    @property
    def name(self):
        if self.kind == PATMAT:
            return "patmat"
        return "toppush" if self.K == 1 else "toppushk"

    def params(self, n_pos, n_neg):
        """Bind to a training set size; returns the kernel parameter vector.

        Raises
        ------
        InfeasibleConfig
            ``K > n_neg`` for TopPushK or ``tau * n < 1`` for PatMat.
        """
        n = n_pos + n_neg
        if self.kind == TOPPUSHK and self.K > n_neg:
            raise InfeasibleConfig(f"K={self.K} exceeds the number of negatives {n_neg}")
        if self.kind == PATMAT and self.tau * n < 1:
            raise InfeasibleConfig(f"tau*n = {self.tau * n:g} < 1")
        return np.array([
            0.0 if self.kind == TOPPUSHK else 1.0,
            float(self.K),
            float(self.C),
            float(self.surrogate_pos.code),
            float(self.surrogate_pos.theta),
            float(self.surrogate_neg.code),
            float(self.surrogate_neg.theta),
            self.tau * n,
        ])

    def to_dict(self):
        return {
            "kind": self.kind,
            "K": int(self.K),
            "tau": float(self.tau),
            "C": float(self.C),
            "surrogate_pos": self.surrogate_pos.to_dict(),
            "surrogate_neg": self.surrogate_neg.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        pos = SurrogateSpec.from_dict(d.get("surrogate_pos", {"family": "quadratic"}))
        neg = SurrogateSpec.from_dict(d["surrogate_neg"]) if "surrogate_neg" in d else pos
        return cls(kind=d["kind"], C=float(d.get("C", 1.0)), K=int(d.get("K", 1)),
                   tau=float(d.get("tau", 0.05)), surrogate_pos=pos, surrogate_neg=neg)


@dataclass
class StepCandidate:
    rule: str
    k: int
    l: int
    delta_lb: float
    delta_ub: float
    gamma: float
    delta_star: float
    new_delta_mult: float
    objective_gain: float


@dataclass
class FeasibilityReport:
    feasible: bool
    violation: str = ""

    def __bool__(self):
        return self.feasible


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def beta_max_excluding(beta, top, e1, e2):
    """Largest ``beta`` outside ``{e1, e2}``; 0 for an empty set.

    ``top`` holds the indices of the three largest entries.
    """
    for t in range(3):
        idx = top[t]
        if idx < 0:
            break
        if idx != e1 and idx != e2:
            return beta[idx]
    return 0.0


@njit(cache=True, nogil=True)
def _clip(x, lo, hi):
    return min(max(x, lo), hi)


@njit(cache=True, nogil=True)
def step_kernel(rule, i, j, par, alpha, beta, aux, top, si, sj, kii, kjj, kij):
    """Optimal step for one coordinate pair.

    ``i, j`` are local indices (into ``alpha`` or ``beta`` as the rule
    dictates); ``si, sj, kii, kjj, kij`` are the matching score and kernel
    entries.  Returns ``(ok, lb, ub, gamma, step, new_delta, gain)``;
    ``ok`` is False for a degenerate curvature.
    """
    kind = par[P_KIND]
    Kp = par[P_K]
    C = par[P_C]
    quad1 = par[P_FAM1] == 1.0
    th1 = par[P_TH1]
    quad2 = par[P_FAM2] == 1.0
    th2 = par[P_TH2]
    ntau = par[P_NTAU]
    sum_alpha = aux[A_SUM_ALPHA]
    delta = aux[A_DELTA]
    patmat = kind == 1.0
    inf = np.inf

    if rule == POSNEG:
        A = kii + kjj + 2.0 * kij
        B = si + sj
    else:
        A = kii + kjj - 2.0 * kij
        B = si - sj
    lb = -inf
    ub = inf

    # positive side: conjugate of l1 and the box on alpha
    if rule == POSPOS:
        ai = alpha[i]
        aj = alpha[j]
        lb = -ai
        ub = aj
        if quad1:
            c = 1.0 / (C * th1 * th1)
            A += c
            B += 0.5 * c * (ai - aj)
        else:
            cap = C * th1
            lb = max(lb, aj - cap)
            ub = min(ub, cap - ai)
    elif rule == POSNEG:
        ai = alpha[i]
        lb = -ai
        B -= 1.0 / th1
        if quad1:
            c = 1.0 / (C * th1 * th1)
            A += 0.5 * c
            B += 0.5 * c * ai
        else:
            ub = C * th1 - ai

    # negative side
    if rule == POSNEG:
        bj = beta[j]
        lb = max(lb, -bj)
        if not patmat:
            if Kp > 1.0:
                bmax = beta_max_excluding(beta, top, j, -1)
                lb = max(lb, Kp * bmax - sum_alpha)
                ub = min(ub, (sum_alpha - Kp * bj) / (Kp - 1.0))
        else:
            B -= 1.0 / th2
    elif rule == NEGNEG:
        bi = beta[i]
        bj = beta[j]
        lb = -bi
        ub = bj
        if not patmat:
            if Kp > 1.0:
                cap = sum_alpha / Kp
                lb = max(lb, bj - cap)
                ub = min(ub, cap - bi)

    # zero step is always admissible from a feasible point; guards rounding
    lb = min(lb, 0.0)
    ub = max(ub, 0.0)

    if patmat and rule != POSPOS:
        if quad2:
            if A <= DEGENERATE_DENOM and not (np.isfinite(lb) and np.isfinite(ub)):
                return False, lb, ub, 0.0, 0.0, delta, 0.0
            return _quad_joint(rule, i, j, beta, aux, A, B, lb, ub, th2, ntau, delta)
        if A <= DEGENERATE_DENOM:
            return False, lb, ub, 0.0, 0.0, delta, 0.0
        return _hinge_pieces(rule, i, j, beta, top, A, B, lb, ub, th2, ntau, delta)

    if A <= DEGENERATE_DENOM:
        return False, lb, ub, 0.0, 0.0, delta, 0.0
    gamma = -B / A
    step = _clip(gamma, lb, ub)
    gain = -B * step - 0.5 * A * step * step
    return True, lb, ub, gamma, step, delta, gain


@njit(cache=True, nogil=True)
def _quad_slope(d, A, B, c, S0, p, q):
    S = S0 + d * (2.0 * p + q * d)
    if S <= 0.0:
        # only reachable at the left end of the interval: right derivative
        return -B - A * d - c * np.sqrt(q)
    return -B - A * d - c * (p + q * d) / np.sqrt(S)


@njit(cache=True, nogil=True)
def _quad_joint(rule, i, j, beta, aux, A, B, lb, ub, th2, ntau, delta):
    # PatMat with quadratic l2: delta is optimal for the post-step beta,
    # which turns the delta terms into -sqrt(ntau * sum(beta^2)) / theta2.
    # The line objective -B*D - A*D^2/2 - c*sqrt(S(D)) is concave; its
    # maximizer on [lb, ub] is found by safeguarded Newton on the slope.
    S0 = aux[A_SUM_BETA_SQ]
    if rule == POSNEG:
        p = beta[j]
        q = 1.0
    else:
        p = beta[i] - beta[j]
        q = 2.0
    c = np.sqrt(ntau) / th2
    lo = lb
    hi = ub
    if not np.isfinite(hi):
        hi = max(lo, 0.0) + 1.0
        while _quad_slope(hi, A, B, c, S0, p, q) > 0.0:
            hi = 2.0 * hi + 1.0
        unbounded_hi = True
    else:
        unbounded_hi = False
    if _quad_slope(lo, A, B, c, S0, p, q) <= 0.0:
        d = lo
    elif not unbounded_hi and _quad_slope(hi, A, B, c, S0, p, q) >= 0.0:
        d = hi
    else:
        d = 0.5 * (lo + hi)
        for _ in range(200):
            g = _quad_slope(d, A, B, c, S0, p, q)
            if g > 0.0:
                lo = d
            else:
                hi = d
            S = S0 + d * (2.0 * p + q * d)
            curv = A
            if S > 0.0:
                curv += c * (q * S - (p + q * d) ** 2) / (S * np.sqrt(S))
            nxt = d + g / curv if curv > 0.0 else 0.5 * (lo + hi)
            if not (lo < nxt < hi):
                nxt = 0.5 * (lo + hi)
            if abs(nxt - d) <= 1e-15 * max(1.0, abs(d)) or hi - lo <= 1e-15 * max(1.0, abs(d)):
                d = nxt
                break
            d = nxt
    S_new = max(S0 + d * (2.0 * p + q * d), 0.0)
    new_delta = np.sqrt(S_new / (4.0 * th2 * th2 * ntau))
    before = 0.0 if delta <= 0.0 else S0 / (4.0 * delta * th2 * th2) + delta * ntau
    gain = -B * d - 0.5 * A * d * d - c * np.sqrt(S_new) + before
    gamma = d
    return True, lb, ub, gamma, d, new_delta, gain


@njit(cache=True, nogil=True)
def _hinge_pieces(rule, i, j, beta, top, A, B, lb, ub, th2, ntau, delta):
    # PatMat with hinge l2: after the step delta = max(beta)/theta2, so the
    # line objective gains the concave term -ntau*max(beta)/theta2.  Each
    # piece on which a different beta attains the max is a clipped quadratic.
    slope = ntau / th2
    best_gain = -np.inf
    best_step = 0.0
    best_gamma = 0.0
    best_delta = delta
    if rule == POSNEG:
        bj = beta[j]
        bm = beta_max_excluding(beta, top, j, -1)
        brk = bm - bj
        los = (lb, max(lb, brk))
        his = (min(ub, brk), ub)
        coef = (B, B + slope)
        for p in range(2):
            lo = los[p]
            hi = his[p]
            if lo > hi:
                continue
            g = -coef[p] / A
            d = _clip(g, lo, hi)
            nd = max(bm, bj + d) / th2
            gain = -B * d - 0.5 * A * d * d - ntau * (nd - delta)
            if gain > best_gain:
                best_gain = gain
                best_step = d
                best_gamma = g
                best_delta = nd
    else:
        bi = beta[i]
        bj = beta[j]
        bm = beta_max_excluding(beta, top, i, j)
        mid = 0.5 * (bj - bi)
        # bm dominant, beta_i + D dominant, beta_j - D dominant
        los = (max(lb, bj - bm), max(lb, max(bm - bi, mid)), lb)
        his = (min(ub, bm - bi), ub, min(ub, min(bj - bm, mid)))
        coef = (B, B + slope, B - slope)
        for p in range(3):
            lo = los[p]
            hi = his[p]
            if lo > hi:
                continue
            g = -coef[p] / A
            d = _clip(g, lo, hi)
            nd = max(bm, max(bi + d, bj - d)) / th2
            gain = -B * d - 0.5 * A * d * d - ntau * (nd - delta)
            if gain > best_gain:
                best_gain = gain
                best_step = d
                best_gamma = g
                best_delta = nd
    return True, lb, ub, best_gamma, best_step, best_delta, best_gain


@njit(cache=True, nogil=True)
def capped_set(beta, cap, Kp, out):
    """Indices of ``beta`` on the cap, written to ``out``; returns the count
    (0 if more than ``K`` qualify, which only rounding can cause)."""
    tol = CAP_TOL * max(1.0, cap)
    m = 0
    for idx in range(beta.shape[0]):
        if beta[idx] >= cap - tol:
            if m >= Kp:
                return 0
            out[m] = idx
            m += 1
    return m


@njit(cache=True, nogil=True)
def _topset_line(D_lb, D_ub, A, B):
    if A <= DEGENERATE_DENOM:
        return False, 0.0, 0.0, 0.0
    lb = min(D_lb, 0.0)
    ub = max(D_ub, 0.0)
    gamma = -B / A
    step = _clip(gamma, lb, ub)
    return True, gamma, step, -B * step - 0.5 * A * step * step


@njit(cache=True, nogil=True)
def topset_kernel(i, T, m, colk, Kmat, s, par, alpha, beta, aux):
    """TopPushK move along ``alpha_i`` that keeps the capped betas on the cap.

    With ``m`` betas on the cap ``sum(alpha)/K`` a pair move cannot change
    ``sum(alpha)`` without pushing a capped beta off its bound, so the
    capped set ``T`` has to follow: ``alpha_i += D``, ``beta_T += D/K``
    and, when ``m < K``, the remaining ``(1 - m/K) D`` goes to one uncapped
    ``beta_j``, the best ``j`` being chosen here.  ``colk`` is the kernel
    column of positive ``i``.  Returns ``(ok, j, lb, ub, gamma, step, gain)``
    with ``j = -1`` when ``m = K``.
    """
    n_pos = alpha.shape[0]
    n_neg = beta.shape[0]
    Kp = par[P_K]
    C = par[P_C]
    quad1 = par[P_FAM1] == 1.0
    th1 = par[P_TH1]
    sum_alpha = aux[A_SUM_ALPHA]
    cap = sum_alpha / Kp
    r = 1.0 / Kp
    w = 1.0 - m * r
    member = np.zeros(n_neg, dtype=np.bool_)
    u = np.zeros(s.shape[0])
    sT = 0.0
    kiT = 0.0
    bmin = np.inf
    for a in range(m):
        ga = n_pos + T[a]
        member[T[a]] = True
        sT += s[ga]
        kiT += colk[ga]
        bmin = min(bmin, beta[T[a]])
        u += Kmat[ga]
    kTT = 0.0
    for a in range(m):
        kTT += u[n_pos + T[a]]
    A0 = Kmat[i, i] + 2.0 * r * kiT + r * r * kTT
    B0 = s[i] + r * sT - 1.0 / th1
    ai = alpha[i]
    lb0 = max(-ai, -Kp * bmin)
    ub0 = np.inf
    if quad1:
        c = 1.0 / (C * th1 * th1)
        A0 += 0.5 * c
        B0 += 0.5 * c * ai
    else:
        ub0 = C * th1 - ai
    # two largest uncapped betas: the others must stay below the moving cap
    v1 = v2 = 0.0
    j1 = -1
    for idx in range(n_neg):
        if not member[idx]:
            b = beta[idx]
            if b > v1:
                v2 = v1
                v1 = b
                j1 = idx
            elif b > v2:
                v2 = b
    if m >= Kp:
        lb = max(lb0, Kp * v1 - sum_alpha)
        ok, gamma, step, gain = _topset_line(lb, ub0, A0, B0)
        return ok, -1, min(lb, 0.0), max(ub0, 0.0), gamma, step, gain
    best = (False, -1, 0.0, 0.0, 0.0, 0.0, 0.0)
    best_gain = 0.0
    rise = w - r
    for j in range(n_neg):
        if member[j]:
            continue
        gj = n_pos + j
        bj = beta[j]
        A = A0 + 2.0 * w * (colk[gj] + r * u[gj]) + w * w * Kmat[gj, gj]
        B = B0 + w * s[gj]
        other = v2 if j == j1 else v1
        lb = max(lb0, Kp * other - sum_alpha, -bj / w)
        ub = ub0
        if rise > 0.0:
            ub = min(ub, max(cap - bj, 0.0) / rise)
        ok, gamma, step, gain = _topset_line(lb, ub, A, B)
        if ok and gain > best_gain:
            best_gain = gain
            best = (True, j, min(lb, 0.0), max(ub, 0.0), gamma, step, gain)
    return best


# ---------------------------------------------------------------------------
# python-facing evaluation


def _split(K):
    return K.n_pos, K.n_neg


def is_feasible(problem, state, tol=FEAS_TOL):
    """Check every dual constraint of ``problem`` at ``state``."""
    a = np.asarray(state.alpha)
    b = np.asarray(state.beta)
    sa = float(a.sum())
    scale = max(1.0, abs(sa))
    s1, s2 = problem.surrogate_pos, problem.surrogate_neg
    if a.size and a.min() < -tol:
        return FeasibilityReport(False, f"alpha[{int(a.argmin())}] = {a.min():.3g} < 0")
    if s1.family == sg.HINGE and a.size and a.max() > problem.C * s1.theta + tol:
        return FeasibilityReport(
            False, f"alpha[{int(a.argmax())}] = {a.max():.6g} > C*theta = {problem.C * s1.theta:.6g}")
    if abs(sa - b.sum()) > tol * scale:
        return FeasibilityReport(False, f"sum(alpha) = {sa:.12g} != sum(beta) = {b.sum():.12g}")
    if b.size and b.min() < -tol:
        return FeasibilityReport(False, f"beta[{int(b.argmin())}] = {b.min():.3g} < 0")
    if problem.kind == TOPPUSHK:
        cap = sa / problem.K
        if b.size and b.max() > cap + tol * scale:
            return FeasibilityReport(
                False, f"beta[{int(b.argmax())}] = {b.max():.6g} > sum(alpha)/K = {cap:.6g}")
    else:
        d = float(state.delta_mult)
        if d < -tol:
            return FeasibilityReport(False, f"delta = {d:.3g} < 0")
        if s2.family == sg.HINGE:
            if b.size and b.max() > d * s2.theta + tol:
                return FeasibilityReport(
                    False, f"beta[{int(b.argmax())}] = {b.max():.6g} > delta*theta2 = {d * s2.theta:.6g}")
        elif d <= 0 and b.size and b.max() > tol:
            return FeasibilityReport(False, "delta = 0 requires beta = 0")
    return FeasibilityReport(True)


def dual_objective(problem, K, state, check=True):
    """Exact dual objective, O(n) via the cached score vector.

    Raises
    ------
    InfeasibleState
        If ``state`` violates a constraint (the objective is ``-inf``).
    """
    if check:
        rep = is_feasible(problem, state)
        if not rep:
            raise InfeasibleState(rep.violation)
    a = np.asarray(state.alpha)
    b = np.asarray(state.beta)
    v = np.concatenate([a, b])
    s1 = problem.surrogate_pos
    C = problem.C
    # clamp the rounding-level excursions tolerated by is_feasible
    y = a / C
    if s1.family == sg.HINGE:
        y = np.clip(y, 0.0, s1.theta)
    else:
        y = np.maximum(y, 0.0)
    val = -0.5 * float(v @ state.scores) - C * float(np.sum(sg.conjugate(s1, y)))
    if problem.kind == PATMAT:
        s2 = problem.surrogate_neg
        d = float(state.delta_mult)
        n = K.n_pos + K.n_neg
        bb = np.maximum(b, 0.0)
        if d > 0:
            y2 = bb / d
            if s2.family == sg.HINGE:
                y2 = np.minimum(y2, s2.theta)
            val -= d * float(np.sum(sg.conjugate(s2, y2)))
        val -= d * n * problem.tau
    return val


def _candidate(problem, K, state, rule, i, j, gi, gj):
    par = problem.params(K.n_pos, K.n_neg)
    s = state.scores
    kij = float(K.entries[gi, gj])
    diag = K.diag
    ok, lb, ub, gamma, step, nd, gain = step_kernel(
        rule, i, j, par, state.alpha, state.beta, state.aux, state.top,
        s[gi], s[gj], diag[gi], diag[gj], kij)
    if not ok:
        raise DegenerateDenominator(
            f"{RULE_NAMES[rule]} step ({gi}, {gj}) has no positive curvature")
    return StepCandidate(RULE_NAMES[rule], gi, gj, lb, ub, gamma, step, nd, gain)


def step_pospos(problem, K, state, k, l):
    """``alpha_k += D, alpha_l -= D`` for positive indices ``k != l``."""
    n_pos, _ = _split(K)
    if not (0 <= k < n_pos and 0 <= l < n_pos) or k == l:
        raise IndexError(f"pospos needs two distinct positive indices, got {k}, {l}")
    return _candidate(problem, K, state, POSPOS, k, l, k, l)


def step_posneg(problem, K, state, k, l):
    """``alpha_k += D, beta_(l - n_pos) += D`` for positive ``k``, negative ``l``."""
    n_pos, n_neg = _split(K)
    if not (0 <= k < n_pos and n_pos <= l < n_pos + n_neg):
        raise IndexError(f"posneg needs a positive and a negative index, got {k}, {l}")
    return _candidate(problem, K, state, POSNEG, k, l - n_pos, k, l)


def step_negneg(problem, K, state, k, l):
    """``beta_k' += D, beta_l' -= D`` for distinct negative global indices."""
    n_pos, n_neg = _split(K)
    n = n_pos + n_neg
    if not (n_pos <= k < n and n_pos <= l < n) or k == l:
        raise IndexError(f"negneg needs two distinct negative indices, got {k}, {l}")
    return _candidate(problem, K, state, NEGNEG, k - n_pos, l - n_pos, k, l)


def step(problem, K, state, k, l):
    """Dispatch on the pos/neg membership of ``k`` and ``l``."""
    n_pos = K.n_pos
    if k < n_pos and l < n_pos:
        return step_pospos(problem, K, state, k, l)
    if k >= n_pos and l >= n_pos:
        return step_negneg(problem, K, state, k, l)
    if k < n_pos:
        return step_posneg(problem, K, state, k, l)
    return step_posneg(problem, K, state, l, k)

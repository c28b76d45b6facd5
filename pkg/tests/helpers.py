"""Random feasible instances shared by the property tests."""

import numpy as np

import oracles as O
from topdual import solver
from topdual.kernel import KernelMatrix, KernelSpec
from topdual.problem import ProblemSpec
from topdual.surrogate import SurrogateSpec

COMBOS = [("toppushk", "hinge"), ("toppushk", "quadratic"),
          ("patmat", "hinge"), ("patmat", "quadratic")]


def random_problem(rng, kind, family, n_pos, n_neg):
    th1, th2 = rng.uniform(0.5, 2.0, 2)
    C = float(rng.choice([0.1, 1.0, 10.0])) * rng.uniform(0.5, 2.0)
    s1 = SurrogateSpec(family, th1)
    if kind == "toppushk":
        K = int(rng.integers(1, min(3, n_neg) + 1))
        p = ProblemSpec.toppushk(K, C=C, surrogate=s1)
        cfg = dict(kind=kind, C=C, fam1=family, th1=th1, K=K)
    else:
        tau = rng.uniform(1.05 / (n_pos + n_neg), 0.5)
        p = ProblemSpec.patmat(tau, C=C, surrogate=s1, surrogate_neg=SurrogateSpec(family, th2))
        cfg = dict(kind=kind, C=C, fam1=family, th1=th1, fam2=family, th2=th2,
                   ntau=tau * (n_pos + n_neg))
    return p, cfg


def _sparsify(rng, v, p=0.25):
    return np.where(rng.random(v.size) < p, 0.0, v)


def random_state(rng, problem, n_pos, n_neg):
    """Feasible ``(alpha, beta)``, often with coordinates on their bounds."""
    s1 = problem.surrogate_pos
    if rng.random() < 0.05:
        return np.zeros(n_pos), np.zeros(n_neg)
    hi = problem.C * s1.theta if s1.family == "hinge" else 1.0
    if s1.family == "hinge":
        a = rng.uniform(0, hi, n_pos)
        a = np.where(rng.random(n_pos) < 0.2, hi, a)
    else:
        a = rng.exponential(size=n_pos)
    a = _sparsify(rng, a)
    if a.sum() == 0:
        a[0] = 0.5 * hi
    S = a.sum()
    if problem.kind == "toppushk":
        b = O._capped_simplex(rng.normal(size=n_neg) * S, S, S / problem.K)
        b = np.clip(b, 0, S / problem.K)
        b *= S / b.sum()
    else:
        b = _sparsify(rng, rng.exponential(size=n_neg))
        if b.sum() == 0:
            b[0] = 1.0
        b *= S / b.sum()
    return a, b


def random_case(rng, kind, family, n_max=12):
    n_pos = int(rng.integers(2, n_max // 2 + 1))
    n_neg = int(rng.integers(2, n_max - n_pos + 1))
    n = n_pos + n_neg
    Ks = O.signed_gram(O.random_psd(rng, n, rank=int(rng.integers(2, n + 1))), n_pos)
    K = KernelMatrix(n_pos, n_neg, Ks, KernelSpec("linear"))
    problem, cfg = random_problem(rng, kind, family, n_pos, n_neg)
    a, b = random_state(rng, problem, n_pos, n_neg)
    state = solver.initialize(problem, K, alpha=a, beta=b)
    return problem, cfg, K, state

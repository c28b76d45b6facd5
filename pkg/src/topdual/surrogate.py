"""Surrogate losses and their convex conjugates."""

from dataclasses import dataclass

import numpy as np

from .exceptions import OutOfDomain

HINGE = "hinge"
QUADRATIC = "quadratic"
FAMILIES = (HINGE, QUADRATIC)

# absorbs rounding when a dual variable sits exactly on a domain boundary
DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class SurrogateSpec:
    """Hinge ``max(0, 1 + theta*s)`` or truncated quadratic (hinge squared)."""

    family: str = QUADRATIC
    theta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown surrogate family {self.family!r}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")

    @property
    def code(self):
        # integer tag understood by the compiled step kernels
        return 0 if self.family == HINGE else 1

    def to_dict(self):
        return {"family": self.family, "theta": float(self.theta)}

    @classmethod
    def from_dict(cls, d):
        return cls(family=d["family"], theta=float(d.get("theta", 1.0)))


def loss(spec, s):
    """Evaluate the surrogate at ``s`` (scalar or array)."""
    r = np.maximum(0.0, 1.0 + spec.theta * np.asarray(s, dtype=float))
    if spec.family == QUADRATIC:
        r = r * r
    return r if r.ndim else float(r)


def in_domain(spec, y):
    y = np.asarray(y, dtype=float)
    if spec.family == HINGE:
        return (y >= -DOMAIN_SLACK) & (y <= spec.theta + DOMAIN_SLACK)
    return y >= -DOMAIN_SLACK


def conjugate(spec, y):
    """Convex conjugate ``sup_s (y*s - loss(s))``.

    Raises
    ------
    OutOfDomain
        If any ``y`` lies where the conjugate is ``+inf``.
    """
    arr = np.asarray(y, dtype=float)
    if not np.all(in_domain(spec, arr)):
        raise OutOfDomain(f"{spec.family} conjugate is +inf at y={y}")
    th = spec.theta
    if spec.family == HINGE:
        r = -arr / th
    else:
        r = arr * arr / (4.0 * th * th) - arr / th
    return r if r.ndim else float(r)


def conjugate_or_inf(spec, y):
    """Like :func:`conjugate` but returns ``inf`` outside the domain."""
    arr = np.asarray(y, dtype=float)
    ok = in_domain(spec, arr)
    th = spec.theta
    if spec.family == HINGE:
        r = -arr / th
    else:
        r = arr * arr / (4.0 * th * th) - arr / th
    r = np.where(ok, r, np.inf)
    return r if r.ndim else float(r)


def perspective(spec, beta, delta):
    """``delta * conjugate(beta / delta)`` summed over ``beta``.

    At ``delta == 0`` the value is 0 when every ``beta`` is zero and
    ``+inf`` otherwise.
    """
    beta = np.asarray(beta, dtype=float)
    if delta <= 0.0:
        return 0.0 if np.all(np.abs(beta) <= DOMAIN_SLACK) else np.inf
    return float(delta * np.sum(conjugate_or_inf(spec, beta / delta)))

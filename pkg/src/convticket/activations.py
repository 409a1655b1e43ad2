"""Activation functions and their local linear models around the origin.

Each supported activation comes with a piecewise-linear approximation
phi_hat(x) = m_plus * x + d (x >= 0), m_minus * x + d (x < 0), valid on a
neighborhood [-a, a] whose half-width a grows with the allowed
approximation error.  The constant r = 1/(m_plus + m_minus) turns the
difference phi(x) - phi(-x) back into (approximately) x, which is what the
ticket constructions exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UnsupportedActivationError

RELU = "relu"
LEAKY_RELU = "leaky_relu"
TANH = "tanh"
SIGMOID = "sigmoid"

KINDS = (RELU, LEAKY_RELU, TANH, SIGMOID)

# Lipschitz constants on the working domain, fixed per activation.
_LIPSCHITZ = {RELU: 1.0, LEAKY_RELU: 1.0, TANH: 1.0, SIGMOID: 0.25}


@dataclass(frozen=True)
class ActivationSpec:
    """Named activation; alpha is the negative-side slope of leaky_relu."""

    kind: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedActivationError("unknown activation kind: %r" % (self.kind,))
        if self.kind == LEAKY_RELU and not self.alpha > 0:
            raise UnsupportedActivationError("leaky_relu requires alpha > 0")

    @classmethod
    def parse(cls, name: str) -> "ActivationSpec":
        """Parse the file-format name: relu | leaky_relu:<alpha> | tanh | sigmoid."""
        if name.startswith(LEAKY_RELU + ":"):
            return cls(LEAKY_RELU, float(name.split(":", 1)[1]))
        return cls(name)

    def canonical_name(self) -> str:
        if self.kind == LEAKY_RELU:
            return "%s:%.17g" % (LEAKY_RELU, self.alpha)
        return self.kind


@dataclass(frozen=True)
class Linearization:
    """Local linear model of an activation near zero.

    r satisfies r * (m_plus + m_minus) = 1; a may be math.inf when the
    model is exact on the whole line (relu, leaky_relu).
    """

    m_plus: float
    m_minus: float
    d: float
    a: float
    r: float
    lipschitz_t: float


def evaluate(act: ActivationSpec, x: float) -> float:
    if act.kind == RELU:
        return x if x > 0 else 0.0
    if act.kind == LEAKY_RELU:
        return x if x > 0 else act.alpha * x
    if act.kind == TANH:
        return math.tanh(x)
    return 1.0 / (1.0 + math.exp(-x))


def apply(act: ActivationSpec, arr: np.ndarray) -> np.ndarray:
    """Vectorized evaluate, used by the forward pass."""
    if act.kind == RELU:
        return np.maximum(arr, 0.0)
    if act.kind == LEAKY_RELU:
        return np.where(arr > 0, arr, act.alpha * arr)
    if act.kind == TANH:
        return np.tanh(arr)
    return 1.0 / (1.0 + np.exp(-arr))


def lipschitz(act: ActivationSpec) -> float:
    return _LIPSCHITZ[act.kind]


def halfwidth(act: ActivationSpec, eps_prime: float) -> float:
    """Validity half-width a(eps') of the linear model at error eps'."""
    if eps_prime <= 0:
        raise DomainError("eps_prime must be positive")
    if act.kind in (RELU, LEAKY_RELU):
        return math.inf
    if act.kind == TANH:
        return min((3.0 * eps_prime) ** (1.0 / 3.0), math.pi / 2.0)
    return min((48.0 * eps_prime) ** (1.0 / 3.0), math.pi)


def linearize(act: ActivationSpec, eps_prime: float) -> Linearization:
    a = halfwidth(act, eps_prime)
    t = lipschitz(act)
    if act.kind == RELU:
        return Linearization(1.0, 0.0, 0.0, a, 1.0, t)
    if act.kind == LEAKY_RELU:
        return Linearization(1.0, act.alpha, 0.0, a, 1.0 / (1.0 + act.alpha), t)
    if act.kind == TANH:
        return Linearization(1.0, 1.0, 0.0, a, 0.5, t)
    return Linearization(0.25, 0.25, 0.5, a, 2.0, t)


def mu_pm(lin: Linearization, x: float) -> float:
    """Active slope selector: m_plus for x > 0, m_minus for x < 0, 0 at 0."""
    if x > 0:
        return lin.m_plus
    if x < 0:
        return lin.m_minus
    return 0.0


def _g(act: ActivationSpec, x: float) -> float:
    return x / halfwidth(act, x)


def _g_branch_point(act: ActivationSpec) -> float:
    # Largest x where the cube-root branch of a(x) is still binding.
    if act.kind == TANH:
        return (math.pi / 2.0) ** 3 / 3.0
    if act.kind == SIGMOID:
        return math.pi**3 / 48.0
    raise UnsupportedActivationError(
        "g-inversion is bypassed for %s (linearization is exact)" % act.kind
    )


def g_upper(act: ActivationSpec) -> float:
    """Upper end of the invertible range of g; planning clamps into (0, g_upper]."""
    bp = _g_branch_point(act)
    return _g(act, bp)


def invert_g(act: ActivationSpec, y: float) -> float:
    """Solve g(x) = x / a(x) = y by bisection to relative tolerance 1e-10.

    Only defined for activations with finite a (tanh, sigmoid); for relu and
    leaky_relu the caller bypasses this entirely.
    """
    bp = _g_branch_point(act)
    upper = _g(act, bp)
    if not 0 < y <= upper:
        raise DomainError(
            "g-inversion target %.6g outside invertible range (0, %.6g] for %s"
            % (y, upper, act.kind)
        )
    lo, hi = 1e-16, bp
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _g(act, mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * hi:
            break
    return 0.5 * (lo + hi)


def identity_error(act: ActivationSpec, x: float, eps_prime: float) -> float:
    """Residual |x - r (phi(x) - phi(-x))| of the identity reconstruction.

    Callers assert the residual is at most 2 * r * eps_prime whenever
    |x| <= a(eps_prime).
    """
    lin = linearize(act, eps_prime)
    return abs(x - lin.r * (evaluate(act, x) - evaluate(act, -x)))

"""Scalar special functions used by the KVFD closed-form solutions.

Gamma, complete/incomplete beta and the two-parameter Mittag-Leffler
function, evaluated in 64-bit arithmetic.  All functions are pure and
stateless; concurrent use is unrestricted.

The Mittag-Leffler evaluation is a hybrid:

* Taylor series with compensated summation while the terms stay small
  enough that cancellation cannot eat the requested tolerance,
* the algebraic asymptotic expansion ``-sum z^-k / Gamma(beta - alpha k)``
  for large negative arguments (plus the oscillatory exponential pair
  when ``1 < alpha < 2``),
* a Talbot Laplace-inversion quadrature for negative arguments in the
  intermediate band where neither series converges usefully
  (``E_{a,b}(-x)`` is the inverse transform of ``s^(a-b)/(s^a + x)``
  evaluated at t = 1),
* exact closed forms for ``alpha`` in {1, 2}, and a half-order reduction
  ``E_{a,b}(z) = (E_{a/2,b}(sqrt z) + E_{a/2,b}(-sqrt z)) / 2`` for
  ``alpha > 1`` with large positive ``z``.

Complex arguments and ``alpha > 2`` are out of scope.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .errors import AccuracyError, DomainError

__all__ = [
    "AccuracySpec",
    "gamma",
    "beta_complete",
    "beta_incomplete",
    "mittag_leffler",
]


@dataclass(frozen=True)
class AccuracySpec:
    """Tolerance and term budget for series-based evaluations."""

    rel_tol: float = 1e-10
    max_terms: int = 10_000

    def __post_init__(self):
        if not (self.rel_tol > 0.0):
            raise DomainError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.max_terms < 1:
            raise DomainError(f"max_terms must be >= 1, got {self.max_terms}")


DEFAULT_ACCURACY = AccuracySpec()

# Band edges for the Mittag-Leffler dispatch (negative real axis).
_Z_SWITCH = 5.0
_Z_ASYM = 70.0

# Nodes for the Talbot inversion contour.
_TALBOT_N = 64


def gamma(x):
    """Gamma(x) for positive real x."""
    if not (isinstance(x, (int, float)) and math.isfinite(x)):
        raise DomainError(f"gamma requires a finite real argument, got {x!r}")
    if x <= 0.0:
        raise DomainError(f"gamma requires x > 0, got {x}")
    return math.gamma(x)


def _reciprocal_gamma(x):
    """1/Gamma(x) for any finite real x, zero at the poles."""
    if x > 0.0:
        if x > 171.6:
            return 0.0
        return 1.0 / math.gamma(x)
    if x == math.floor(x):
        return 0.0
    # Reflection: 1/Gamma(x) = Gamma(1-x) sin(pi x) / pi.
    s = math.sin(math.pi * x)
    lg = math.lgamma(1.0 - x)
    if lg > 700.0:
        return 0.0
    return math.exp(lg) * s / math.pi


def beta_complete(x, y):
    """Complete beta function B(x, y) for x, y > 0."""
    for v in (x, y):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0.0):
            raise DomainError(f"beta_complete requires positive finite arguments, got ({x!r}, {y!r})")
    return math.exp(math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y))


def _beta_contfrac(x, y, a, rel_tol=1e-14, max_iter=500):
    """Modified-Lentz continued fraction for the regularized I_a(x, y).

    Valid (fast) for a < (x + 1)/(x + y + 2).  Returns the continued
    fraction value; the caller applies the front factor.
    """
    tiny = 1e-300
    qab = x + y
    qap = x + 1.0
    qam = x - 1.0
    c = 1.0
    d = 1.0 - qab * a / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        # even step
        num = m * (y - m) * a / ((qam + m2) * (x + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        num = -(x + m) * (qab + m) * a / ((x + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < rel_tol:
            return h
    return None


def _beta_incomplete_quad(a, x, y):
    """Adaptive-quadrature fallback for the non-regularized B(a; x, y)."""
    from scipy import integrate

    # QAWS integrates f(t) * (t - 0)^(x-1) with the algebraic endpoint
    # singularity handled internally; (1-t)^(y-1) is smooth on [0, a], a < 1.
    val, _ = integrate.quad(
        lambda t: (1.0 - t) ** (y - 1.0),
        0.0,
        a,
        weight="alg",
        wvar=(x - 1.0, 0.0),
        limit=200,
    )
    return val


def beta_incomplete(a, x, y):
    """Non-regularized incomplete beta B(a; x, y) = int_0^a t^(x-1)(1-t)^(y-1) dt."""
    for v, name in ((x, "x"), (y, "y")):
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0.0):
            raise DomainError(f"beta_incomplete requires {name} > 0, got {v!r}")
    if not (isinstance(a, (int, float)) and math.isfinite(a) and 0.0 <= a <= 1.0):
        raise DomainError(f"beta_incomplete requires a in [0, 1], got {a!r}")
    if a == 0.0:
        return 0.0
    full = beta_complete(x, y)
    if a == 1.0:
        return full
    ln_front = x * math.log(a) + y * math.log1p(-a) - math.log(x)
    if a < (x + 1.0) / (x + y + 2.0):
        cf = _beta_contfrac(x, y, a)
        if cf is not None:
            return math.exp(ln_front) * cf
    else:
        cf = _beta_contfrac(y, x, 1.0 - a)
        if cf is not None:
            ln_front_sym = y * math.log1p(-a) + x * math.log(a) - math.log(y)
            reg = 1.0 - math.exp(ln_front_sym - (math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y))) * cf
            return reg * full
    return _beta_incomplete_quad(a, x, y)


# ---------------------------------------------------------------------------
# Mittag-Leffler
# ---------------------------------------------------------------------------


def _ml_series(alpha, beta, z, spec):
    """Taylor series with Kahan summation; None if cancellation-unsafe."""
    # Bail-out threshold: with terms capped at ~1e4 the summation roundoff
    # stays near 1e-12 absolute, well inside rel_tol for band-edge values.
    term_cap = 1e4 if z < 0.0 else 1e290
    total = 0.0
    comp = 0.0
    term = _reciprocal_gamma(beta)
    k = 0
    zk = 1.0
    prev_abs = math.inf
    while k < spec.max_terms:
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        k += 1
        zk *= z
        if not math.isfinite(zk):
            return None
        rg = _reciprocal_gamma(alpha * k + beta)
        decreasing = abs(term) < prev_abs
        prev_abs = abs(term)
        term = zk * rg
        if abs(term) > term_cap:
            return None
        if decreasing and abs(term) < prev_abs and abs(term) <= spec.rel_tol * max(abs(total), 1e-300):
            # Past the peak of the term sequence the tail is dominated by
            # the first omitted term; one extra term for safety.
            total += term
            return total
    return None


def _ml_asymptotic_terms(alpha, beta, z, spec):
    """-sum_{k>=1} z^-k / Gamma(beta - alpha k), truncated at the smallest term."""
    total = 0.0
    prev = math.inf
    zk = 1.0
    for k in range(1, 200):
        zk *= z
        term = -_reciprocal_gamma(beta - alpha * k) / zk
        if term == 0.0:
            # Gamma pole; the term drops out but the expansion continues.
            continue
        if abs(term) >= prev:
            break
        total += term
        prev = abs(term)
        if abs(term) <= spec.rel_tol * max(abs(total), 1e-300):
            return total, True
    return total, prev <= spec.rel_tol * max(abs(total), 1e-300) * 10.0


def _ml_asymptotic_neg(alpha, beta, z, spec):
    total, ok = _ml_asymptotic_terms(alpha, beta, z, spec)
    if 1.0 < alpha < 2.0:
        # Conjugate pair of exponential contributions off the negative axis.
        zeta = (-z) ** (1.0 / alpha) * cmath.exp(1j * math.pi / alpha)
        total += (2.0 / alpha) * (zeta ** (1.0 - beta) * cmath.exp(zeta)).real
    return total, ok


def _ml_talbot_neg(alpha, beta, lam):
    """E_{alpha,beta}(-lam) via Talbot inversion of s^(alpha-beta)/(s^alpha+lam).

    Weideman's modified Talbot contour, midpoint rule, t = 1.
    """
    n = _TALBOT_N
    acc = 0.0 + 0.0j
    for k in range(n):
        theta = -math.pi + (k + 0.5) * (2.0 * math.pi / n)
        w = 0.6407 * theta
        cot = math.cos(w) / math.sin(w)
        s = n * (0.5017 * theta * cot - 0.6122 + 0.2645j * theta)
        ds = n * (
            0.5017 * cot
            - 0.5017 * 0.6407 * theta / (math.sin(w) ** 2)
            + 0.2645j
        )
        f = s ** (alpha - beta) / (s ** alpha + lam)
        acc += cmath.exp(s) * f * ds
    return (acc / (1j * n)).real


def mittag_leffler(alpha, beta, z, spec: AccuracySpec = DEFAULT_ACCURACY):
    """Two-parameter Mittag-Leffler function E_{alpha,beta}(z) for real z.

    Requires ``0 < alpha <= 2`` and ``beta > 0``.  The primary use here is
    ``z <= 0`` with ``alpha`` in (0, 1); other regions are supported on a
    best-effort basis and raise :class:`AccuracyError` where no certified
    strategy exists (``1 < alpha < 2`` with large negative ``z`` falls back
    to the exponentially-improved asymptotic expansion).
    """
    for v, name in ((alpha, "alpha"), (beta, "beta"), (z, "z")):
        if not (isinstance(v, (int, float)) and math.isfinite(v)):
            raise DomainError(f"mittag_leffler requires finite real {name}, got {v!r}")
    if not (0.0 < alpha <= 2.0):
        raise DomainError(f"mittag_leffler requires alpha in (0, 2], got {alpha}")
    if beta <= 0.0:
        raise DomainError(f"mittag_leffler requires beta > 0, got {beta}")

    if z == 0.0:
        return _reciprocal_gamma(beta)

    # Exact closed forms.
    if alpha == 1.0:
        if beta == 1.0:
            return math.exp(z)
        if beta == 2.0:
            return math.expm1(z) / z
    if alpha == 2.0:
        if beta == 1.0:
            return math.cosh(math.sqrt(z)) if z > 0.0 else math.cos(math.sqrt(-z))
        if beta == 2.0:
            if z > 0.0:
                r = math.sqrt(z)
                return math.sinh(r) / r
            r = math.sqrt(-z)
            return math.sin(r) / r

    if abs(z) <= _Z_SWITCH:
        val = _ml_series(alpha, beta, z, spec)
        if val is not None:
            return val

    if z < 0.0:
        if alpha < 1.0 or alpha == 1.0:
            if -z >= _Z_ASYM:
                val, ok = _ml_asymptotic_neg(alpha, beta, z, spec)
                if ok:
                    return val
            return _ml_talbot_neg(alpha, beta, -z)
        # 1 < alpha < 2: series already failed, use the exponentially
        # improved expansion (accuracy degrades near the band edge).
        val = _ml_series(alpha, beta, z, spec)
        if val is not None:
            return val
        val, _ = _ml_asymptotic_neg(alpha, beta, z, spec)
        return val

    # z > 0 beyond the series-safe region.
    if alpha > 1.0:
        r = math.sqrt(z)
        return 0.5 * (
            mittag_leffler(alpha / 2.0, beta, r, spec)
            + mittag_leffler(alpha / 2.0, beta, -r, spec)
        )
    val = _ml_series(alpha, beta, z, spec)
    if val is not None:
        return val
    # Exponential asymptotics on the positive axis, 0 < alpha <= 1.
    arg = z ** (1.0 / alpha)
    if arg > 700.0:
        raise AccuracyError(
            f"mittag_leffler overflow for alpha={alpha}, beta={beta}, z={z}"
        )
    lead = (1.0 / alpha) * z ** ((1.0 - beta) / alpha) * math.exp(arg)
    tail, _ = _ml_asymptotic_terms(alpha, beta, z, spec)
    return lead + tail

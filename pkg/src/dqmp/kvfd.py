"""Kelvin-Voigt fractional-derivative (KVFD) forward models.

Closed-form responses of the three-parameter KVFD solid (elastic modulus
``e0`` [Pa], fractional order ``alpha``, time constant ``tau`` [s]) for four
loading protocols:

* spherical-indenter ramp-relaxation force,
* spherical-indenter load-unload force,
* spherical-indenter ramp-creep response (in indentation-depth^(3/2) space),
* plate-indenter ramp-creep strain.

A protocol-independent numerical oracle (:func:`oracle_force`) evaluates the
hereditary Boltzmann-superposition integral of the constitutive law directly
and is used to validate every closed form: the constitutive relation
``sigma = E0 eps + E0 tau^alpha d^alpha eps/dt^alpha`` yields the relaxation
kernel ``E0 [1 + ((t - xi)/tau)^(-alpha) / Gamma(1 - alpha)]`` applied to the
protocol's piecewise-linear input history.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import specfn
from .errors import DomainError, FormatError

__all__ = [
    "Protocol",
    "ParameterVector",
    "ProtocolConfig",
    "Curve",
    "relaxation_force",
    "load_unload_force",
    "sphere_creep_response",
    "plate_creep_strain",
    "sample_curve",
    "curve_values",
    "oracle_force",
    "read_curve_csv",
    "write_curve_csv",
    "E0_BOUNDS",
    "ALPHA_BOUNDS",
    "TAU_BOUNDS",
]

# Physical search box for the three parameters.
E0_BOUNDS = (10.0, 100_000.0)
ALPHA_BOUNDS = (0.01, 0.99)
TAU_BOUNDS = (1.0, 1000.0)


class Protocol(enum.Enum):
    RAMP_RELAXATION = "ramp_relaxation"
    LOAD_UNLOAD = "load_unload"
    RAMP_CREEP_SPHERE = "ramp_creep_sphere"
    RAMP_CREEP_PLATE = "ramp_creep_plate"


@dataclass(frozen=True)
class ParameterVector:
    """KVFD triple [e0, alpha, tau] in physical units."""

    e0: float
    alpha: float
    tau: float

    def __post_init__(self):
        for name, value, (lo, hi) in (
            ("e0", self.e0, E0_BOUNDS),
            ("alpha", self.alpha, ALPHA_BOUNDS),
            ("tau", self.tau, TAU_BOUNDS),
        ):
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise DomainError(f"{name} must be finite, got {value!r}")
            if not (lo <= value <= hi):
                raise DomainError(f"{name}={value} outside search box [{lo}, {hi}]")

    def as_array(self):
        return np.array([self.e0, self.alpha, self.tau], dtype=float)

    @staticmethod
    def from_array(a):
        return ParameterVector(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class ProtocolConfig:
    """Loading-protocol geometry and timing.

    Only the fields relevant to ``protocol`` are consulted:

    * displacement-controlled sphere tests need ``probe_radius`` and
      ``max_depth``; the ramp rate is ``v = max_depth / ramp_time``,
    * the force-controlled sphere creep needs ``probe_radius`` and
      ``max_force``; the loading rate is ``k = max_force / ramp_time``,
    * the plate creep needs ``sigma0`` (and optionally ``plate_area`` for
      bookkeeping).
    """

    protocol: Protocol
    ramp_time: float
    hold_time: float = 0.0
    probe_radius: float = 0.0
    max_depth: float = 0.0
    max_force: float = 0.0
    sigma0: float = 0.0
    plate_area: float = 0.0

    def __post_init__(self):
        if not (self.ramp_time > 0.0 and math.isfinite(self.ramp_time)):
            raise DomainError(f"ramp_time must be positive, got {self.ramp_time}")
        if self.hold_time < 0.0:
            raise DomainError(f"hold_time must be >= 0, got {self.hold_time}")
        needed = {
            Protocol.RAMP_RELAXATION: ("probe_radius", "max_depth"),
            Protocol.LOAD_UNLOAD: ("probe_radius", "max_depth"),
            Protocol.RAMP_CREEP_SPHERE: ("probe_radius", "max_force"),
            Protocol.RAMP_CREEP_PLATE: ("sigma0",),
        }[self.protocol]
        for name in needed:
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise DomainError(
                    f"{self.protocol.value} requires positive {name}, got {value}"
                )

    @property
    def ramp_rate(self):
        """v = h_m / T_r for displacement control."""
        return self.max_depth / self.ramp_time

    @property
    def load_rate(self):
        """k = P_m / T_r for force control."""
        return self.max_force / self.ramp_time

    @property
    def duration(self):
        if self.protocol is Protocol.LOAD_UNLOAD:
            return 2.0 * self.ramp_time
        return self.ramp_time + self.hold_time


@dataclass(frozen=True)
class Curve:
    """A protocol-tagged sampled response: force [N], depth^(3/2) [m^1.5] or strain."""

    protocol: ProtocolConfig
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.shape != times.shape:
            raise DomainError("times and values must be 1-D arrays of equal length")
        if len(times) < 2:
            raise DomainError("a curve needs at least two samples")
        if times[0] < 0.0 or np.any(np.diff(times) <= 0.0):
            raise DomainError("times must start at >= 0 and increase strictly")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise DomainError("curve samples must be finite")

    def __len__(self):
        return len(self.times)


def _check_time(t, lo, hi, what):
    if not (isinstance(t, (int, float)) and math.isfinite(t)):
        raise DomainError(f"{what}: time must be finite, got {t!r}")
    if t < lo - 1e-12 or t > hi * (1.0 + 1e-12):
        raise DomainError(f"{what}: t={t} outside [{lo}, {hi}]")


def _sphere_prefactor(params, proto):
    v = proto.ramp_rate
    return 4.0 * math.sqrt(proto.probe_radius) * v ** 1.5 * params.e0


def _ramp_force(params, proto, t):
    """Loading-branch force, shared by relaxation and load-unload."""
    a = params.alpha
    bc = specfn.beta_complete(1.5, 1.0 - a)
    g1a = specfn.gamma(1.0 - a)
    return _sphere_prefactor(params, proto) * t ** 1.5 * (
        2.0 / 3.0 + (t / params.tau) ** (-a) * bc / g1a
    )


def _hold_force(params, proto, t):
    """Post-ramp relaxation force: the ramp history convolved past T_r."""
    a = params.alpha
    tr = proto.ramp_time
    binc = specfn.beta_incomplete(tr / t, 1.5, 1.0 - a)
    g1a = specfn.gamma(1.0 - a)
    return _sphere_prefactor(params, proto) * (
        2.0 / 3.0 * tr ** 1.5 + t ** 1.5 * (t / params.tau) ** (-a) * binc / g1a
    )


def relaxation_force(params: ParameterVector, proto: ProtocolConfig, t: float) -> float:
    """Ramp-relaxation force [N] of a spherical indenter at time t."""
    if proto.protocol is not Protocol.RAMP_RELAXATION:
        raise DomainError("relaxation_force requires a RAMP_RELAXATION protocol")
    _check_time(t, 0.0, proto.duration, "relaxation_force")
    if t <= 0.0:
        return 0.0
    if t <= proto.ramp_time:
        return _ramp_force(params, proto, t)
    return _hold_force(params, proto, t)


def _unload_tail(params, proto, t):
    """Integral term of the unloading branch.

    ``int_0^{t-Tr} w^-alpha sqrt(2 Tr - t + w) dw`` evaluated with a
    QUADPACK algebraic-weight rule (the w^-alpha endpoint singularity is
    handled analytically by the rule).
    """
    from scipy import integrate

    a = params.alpha
    tr = proto.ramp_time
    w_max = t - tr
    if w_max <= 0.0:
        return 0.0
    c = 2.0 * tr - t
    val, _ = integrate.quad(
        lambda w: math.sqrt(c + w),
        0.0,
        w_max,
        weight="alg",
        wvar=(-a, 0.0),
        limit=200,
    )
    return val


def load_unload_force(params: ParameterVector, proto: ProtocolConfig, t: float) -> float:
    """Load-unload (triangle displacement) force [N] of a spherical indenter."""
    if proto.protocol is not Protocol.LOAD_UNLOAD:
        raise DomainError("load_unload_force requires a LOAD_UNLOAD protocol")
    _check_time(t, 0.0, 2.0 * proto.ramp_time, "load_unload_force")
    if t <= 0.0:
        return 0.0
    tr = proto.ramp_time
    if t <= tr:
        return _ramp_force(params, proto, t)
    a = params.alpha
    g1a = specfn.gamma(1.0 - a)
    pref = _sphere_prefactor(params, proto)
    unload = pref * (
        2.0 / 3.0 * (tr ** 1.5 - (2.0 * tr - t) ** 1.5)
        + params.tau ** a / g1a * _unload_tail(params, proto, t)
    )
    return _hold_force(params, proto, t) - unload


def sphere_creep_response(params: ParameterVector, proto: ProtocolConfig, t: float) -> float:
    """Ramp-creep response h^(3/2)(t) [m^1.5] of a force-controlled sphere test."""
    if proto.protocol is not Protocol.RAMP_CREEP_SPHERE:
        raise DomainError("sphere_creep_response requires a RAMP_CREEP_SPHERE protocol")
    _check_time(t, 0.0, proto.duration, "sphere_creep_response")
    c = 3.0 * proto.load_rate / (8.0 * math.sqrt(proto.probe_radius) * params.e0)
    return c * _creep_kernel(params, proto.ramp_time, t)


def plate_creep_strain(params: ParameterVector, proto: ProtocolConfig, t: float) -> float:
    """Ramp-creep strain of a plate indenter under maximum stress sigma0."""
    if proto.protocol is not Protocol.RAMP_CREEP_PLATE:
        raise DomainError("plate_creep_strain requires a RAMP_CREEP_PLATE protocol")
    _check_time(t, 0.0, proto.duration, "plate_creep_strain")
    c = proto.sigma0 / (params.e0 * proto.ramp_time)
    return c * _creep_kernel(params, proto.ramp_time, t)


def _creep_kernel(params, tr, t):
    """Shared two-branch creep shape: t_r-normalised retardation response."""
    if t <= 0.0:
        return 0.0
    a, tau = params.alpha, params.tau
    ml = lambda x: specfn.mittag_leffler(a, 2.0, -((x / tau) ** a))
    if t <= tr:
        return t * (1.0 - ml(t))
    return tr + (t - tr) * ml(t - tr) - t * ml(t)


# ---------------------------------------------------------------------------
# Sampling (vectorized synthesis)
# ---------------------------------------------------------------------------


def curve_values(params: ParameterVector, proto: ProtocolConfig, times) -> np.ndarray:
    """Closed-form response values on an arbitrary time grid (vectorized).

    The relaxation branch uses scipy's regularized incomplete beta for
    speed; agreement with the scalar ``specfn``-based operations is part of
    the test suite.
    """
    from scipy import special as sps

    times = np.asarray(times, dtype=float)
    if np.any(times < -1e-12) or np.any(times > proto.duration * (1.0 + 1e-12)):
        raise DomainError("curve_values: times outside the protocol window")
    out = np.zeros_like(times)
    pos = times > 0.0
    t = times[pos]
    a, tau = params.alpha, params.tau
    tr = proto.ramp_time

    if proto.protocol in (Protocol.RAMP_RELAXATION, Protocol.LOAD_UNLOAD):
        pref = _sphere_prefactor(params, proto)
        bc = specfn.beta_complete(1.5, 1.0 - a)
        g1a = specfn.gamma(1.0 - a)
        vals = np.empty_like(t)
        ramp = t <= tr
        tv = t[ramp]
        vals[ramp] = pref * tv ** 1.5 * (2.0 / 3.0 + (tv / tau) ** (-a) * bc / g1a)
        tv = t[~ramp]
        if tv.size:
            binc = sps.betainc(1.5, 1.0 - a, tr / tv) * bc
            hold = pref * (2.0 / 3.0 * tr ** 1.5 + tv ** 1.5 * (tv / tau) ** (-a) * binc / g1a)
            if proto.protocol is Protocol.RAMP_RELAXATION:
                vals[~ramp] = hold
            else:
                tail = np.array([_unload_tail(params, proto, x) for x in tv])
                unload = pref * (
                    2.0 / 3.0 * (tr ** 1.5 - (2.0 * tr - tv) ** 1.5)
                    + tau ** a / g1a * tail
                )
                vals[~ramp] = hold - unload
        out[pos] = vals
        return out

    # Creep protocols: evaluate E_{alpha,2} pointwise.
    if proto.protocol is Protocol.RAMP_CREEP_SPHERE:
        c = 3.0 * proto.load_rate / (8.0 * math.sqrt(proto.probe_radius) * params.e0)
    else:
        c = proto.sigma0 / (params.e0 * tr)
    out[pos] = np.array([c * _creep_kernel(params, tr, x) for x in t])
    return out


def sample_curve(params: ParameterVector, proto: ProtocolConfig, m: int = 250) -> Curve:
    """Uniformly sampled closed-form response over the protocol's window."""
    if m < 2:
        raise DomainError(f"sample_curve requires m >= 2, got {m}")
    times = np.linspace(0.0, proto.duration, int(m))
    return Curve(proto, times, curve_values(params, proto, times))


# ---------------------------------------------------------------------------
# Hereditary-integral oracle
# ---------------------------------------------------------------------------


def _input_history(proto, s):
    """Controlled quantity over time: depth^(3/2), force, or stress."""
    tr = proto.ramp_time
    if proto.protocol is Protocol.RAMP_RELAXATION:
        return (proto.ramp_rate * np.minimum(s, tr)) ** 1.5
    if proto.protocol is Protocol.LOAD_UNLOAD:
        h = np.where(s <= tr, proto.ramp_rate * s, proto.ramp_rate * (2.0 * tr - s))
        return np.clip(h, 0.0, None) ** 1.5
    if proto.protocol is Protocol.RAMP_CREEP_SPHERE:
        return proto.load_rate * np.minimum(s, tr)
    return proto.sigma0 / tr * np.minimum(s, tr)


def _contact_constant(params, proto):
    """Hertzian geometric constant: response = C * (x + tau^a D^a x)."""
    if proto.protocol in (
        Protocol.RAMP_RELAXATION,
        Protocol.LOAD_UNLOAD,
        Protocol.RAMP_CREEP_SPHERE,
    ):
        return 8.0 * math.sqrt(proto.probe_radius) / 3.0 * params.e0
    return params.e0


def _oracle_direct(params, proto, t, n_quad):
    """Displacement-controlled force: product-trapezoidal hereditary integral.

    The singular kernel (t - xi)^-alpha is integrated exactly over each
    panel against a piecewise-linear interpolant of the input history.
    """
    a, tau = params.alpha, params.tau
    s = np.linspace(0.0, t, n_quad + 1)
    g = _input_history(proto, s)
    dg = np.diff(g) / np.diff(s)
    w = (t - s) ** (1.0 - a)
    panel = (w[:-1] - w[1:]) / (1.0 - a)
    frac = tau ** a / math.gamma(1.0 - a) * float(dg @ panel)
    return _contact_constant(params, proto) * (g[-1] + frac)


_SOLVE_CACHE: dict = {}


def _oracle_creep_solution(params, proto, n_quad):
    """L1 time-stepping solution of C (x + tau^a D^a x) = u on [0, duration]."""
    key = (params.e0, params.alpha, params.tau, proto, n_quad)
    hit = _SOLVE_CACHE.get(key)
    if hit is not None:
        return hit
    a, tau = params.alpha, params.tau
    n = n_quad
    grid = np.linspace(0.0, proto.duration, n + 1)
    dt = grid[1] - grid[0]
    u = _input_history(proto, grid)
    c_geo = _contact_constant(params, proto)
    c0 = dt ** (-a) / math.gamma(2.0 - a)
    m = np.arange(n + 1, dtype=float)
    b = (m + 1.0) ** (1.0 - a) - m ** (1.0 - a)
    amp = tau ** a * c0
    x = np.zeros(n + 1)
    dx = np.zeros(n)
    for j in range(1, n + 1):
        hist = float(b[1:j][::-1] @ dx[: j - 1]) if j > 1 else 0.0
        x[j] = (u[j] / c_geo + amp * (x[j - 1] - hist)) / (1.0 + amp)
        dx[j - 1] = x[j] - x[j - 1]
    if len(_SOLVE_CACHE) > 32:
        _SOLVE_CACHE.clear()
    _SOLVE_CACHE[key] = (grid, x)
    return grid, x


def oracle_force(params: ParameterVector, proto: ProtocolConfig, t: float, n_quad: int = 20_000):
    """Numerical ground truth for any protocol, from the constitutive law only.

    Displacement-controlled protocols evaluate the Boltzmann superposition
    integral directly; creep protocols solve the fractional Volterra
    equation by L1 time stepping.  Converges to the closed forms as
    ``n_quad`` grows; with the default 20,000 panels agreement is well
    inside 1e-3 relative away from t = 0.
    """
    if n_quad < 100:
        raise DomainError(f"oracle_force requires n_quad >= 100, got {n_quad}")
    _check_time(t, 0.0, proto.duration, "oracle_force")
    if t <= 0.0:
        return 0.0
    if proto.protocol in (Protocol.RAMP_RELAXATION, Protocol.LOAD_UNLOAD):
        return _oracle_direct(params, proto, t, n_quad)
    grid, x = _oracle_creep_solution(params, proto, n_quad)
    return float(np.interp(t, grid, x))


# ---------------------------------------------------------------------------
# Curve CSV format (shared with datagen): header "t,value", LF endings
# ---------------------------------------------------------------------------


def write_curve_csv(path, curve: Curve):
    with open(path, "w", newline="\n") as fh:
        fh.write("t,value\n")
        for t, v in zip(curve.times, curve.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def read_curve_csv(path, proto: ProtocolConfig) -> Curve:
    times, values = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "t,value":
            raise FormatError(f"{path}: expected header 't,value', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                t_str, v_str = line.split(",")
                times.append(float(t_str))
                values.append(float(v_str))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad sample line {line!r}") from exc
    return Curve(proto, np.array(times), np.array(values))

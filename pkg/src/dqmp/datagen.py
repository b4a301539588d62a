"""Parameter sampling, noise models, and training-dataset generation.

Two dataset kinds are produced for the estimator's networks:

* initial-guess samples: a per-curve min-max normalized response paired with
  the min-max normalized parameter triple that generated it,
* reward samples: a curve residual, scaled by 1/max|true curve| so records
  are comparable across the 4-decade stiffness range, paired with the global
  reward of each of the 2^k candidate parameter moves.

Both serialize to a small self-describing binary container so that a
generated dataset is byte-reproducible from its master seed.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kvfd
from .errors import DomainError, FormatError
from .kvfd import Curve, ParameterVector, ProtocolConfig

__all__ = [
    "ParameterBox",
    "NoiseFamily",
    "NoiseSpec",
    "Dataset",
    "DEFAULT_BOX",
    "normalize_params",
    "denormalize_params",
    "sample_params",
    "normalize_curve",
    "add_noise",
    "gen_din_dataset",
    "gen_drn_dataset",
    "split_dataset",
    "write_dataset",
    "read_dataset",
    "record_rng",
]


@dataclass(frozen=True)
class ParameterBox:
    """Per-parameter (min, max) search ranges."""

    e0: tuple = kvfd.E0_BOUNDS
    alpha: tuple = kvfd.ALPHA_BOUNDS
    tau: tuple = kvfd.TAU_BOUNDS

    def __post_init__(self):
        for name in ("e0", "alpha", "tau"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise DomainError(f"ParameterBox.{name}: need min < max, got ({lo}, {hi})")

    @property
    def lows(self):
        return np.array([self.e0[0], self.alpha[0], self.tau[0]])

    @property
    def highs(self):
        return np.array([self.e0[1], self.alpha[1], self.tau[1]])

    @property
    def k(self):
        return 3

    def contains(self, p: ParameterVector) -> bool:
        x = p.as_array()
        return bool(np.all(x >= self.lows) and np.all(x <= self.highs))


DEFAULT_BOX = ParameterBox()


class NoiseFamily(enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    RAYLEIGH = "rayleigh"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class NoiseSpec:
    """Additive per-sample noise of a given family and standard deviation.

    ``scale`` is the standard deviation in curve units, or as a fraction of
    max|values| when ``relative`` is set.  Rayleigh and exponential draws are
    positive-biased; ``zero_mean`` (default) subtracts their analytic mean so
    the noise does not shift the curve.
    """

    family: NoiseFamily = NoiseFamily.NONE
    scale: float = 0.0
    zero_mean: bool = True
    relative: bool = False

    def __post_init__(self):
        if not (self.scale >= 0.0 and math.isfinite(self.scale)):
            raise DomainError(f"noise scale must be >= 0, got {self.scale}")


def normalize_params(p: ParameterVector, box: ParameterBox = DEFAULT_BOX) -> np.ndarray:
    """Min-max map of the parameter triple into [0, 1]^3."""
    if not box.contains(p):
        raise DomainError(f"{p} outside {box}")
    return (p.as_array() - box.lows) / (box.highs - box.lows)


def denormalize_params(u, box: ParameterBox = DEFAULT_BOX) -> ParameterVector:
    u = np.asarray(u, dtype=float)
    if u.shape != (box.k,):
        raise DomainError(f"expected {box.k} normalized coordinates, got shape {u.shape}")
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise DomainError(f"normalized coordinates outside [0, 1]: {u}")
    return ParameterVector.from_array(box.lows + u * (box.highs - box.lows))


def record_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-record generator; any generation schedule yields identical data."""
    return np.random.default_rng([master_seed, index])


def sample_params(rng: np.random.Generator, box: ParameterBox = DEFAULT_BOX) -> ParameterVector:
    """Uniform draw in normalized space, mapped back to physical units."""
    return denormalize_params(rng.uniform(0.0, 1.0, size=box.k), box)


def normalize_curve(values: np.ndarray) -> np.ndarray:
    """Per-curve min-max normalization; constant curves map to all zeros."""
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def add_noise(curve: Curve, spec: NoiseSpec, rng: np.random.Generator) -> Curve:
    if spec.family is NoiseFamily.NONE or spec.scale == 0.0:
        return curve
    n = len(curve)
    std = spec.scale
    if spec.relative:
        std = std * float(np.max(np.abs(curve.values)))
    if spec.family is NoiseFamily.GAUSSIAN:
        noise = rng.normal(0.0, std, size=n)
    elif spec.family is NoiseFamily.UNIFORM:
        half = std * math.sqrt(3.0)
        noise = rng.uniform(-half, half, size=n)
    elif spec.family is NoiseFamily.RAYLEIGH:
        sigma = std / math.sqrt(2.0 - math.pi / 2.0)
        noise = rng.rayleigh(sigma, size=n)
        if spec.zero_mean:
            noise = noise - sigma * math.sqrt(math.pi / 2.0)
    elif spec.family is NoiseFamily.EXPONENTIAL:
        noise = rng.exponential(std, size=n)
        if spec.zero_mean:
            noise = noise - std
    else:  # pragma: no cover
        raise DomainError(f"unknown noise family {spec.family}")
    return Curve(curve.protocol, curve.times, curve.values + noise)


# ---------------------------------------------------------------------------
# In-memory dataset + binary container
# ---------------------------------------------------------------------------

_MAGIC = b"DQMPDS1\x00"
KIND_DIN = 1
KIND_DRN = 2


@dataclass
class Dataset:
    """A batch of fixed-width training records.

    ``inputs`` has shape (count, m); ``targets`` has shape (count, k) for
    initial-guess data or (count, 2^k) for reward data.
    """

    kind: int
    m: int
    k: int
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.kind not in (KIND_DIN, KIND_DRN):
            raise DomainError(f"dataset kind must be 1 or 2, got {self.kind}")
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.float32)
        want = self.k if self.kind == KIND_DIN else 2 ** self.k
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.m:
            raise DomainError(f"inputs must be (count, {self.m})")
        if self.targets.shape != (len(self.inputs), want):
            raise DomainError(f"targets must be (count, {want})")

    def __len__(self):
        return len(self.inputs)

    @property
    def target_width(self):
        return self.targets.shape[1]


def write_dataset(path, ds: Dataset):
    header = _MAGIC + struct.pack("<IBIIQ", 1, ds.kind, ds.m, ds.k, len(ds))
    records = np.hstack([ds.inputs, ds.targets]).astype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
    except OSError as exc:
        raise FormatError(f"writing dataset {path}: {exc}") from exc


def read_dataset(path) -> Dataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"reading dataset {path}: {exc}") from exc
    if len(blob) < 8 + 21 or blob[:8] != _MAGIC:
        raise FormatError(f"{path}: not a dataset container (bad magic)")
    version, kind, m, k, count = struct.unpack_from("<IBIIQ", blob, 8)
    if version != 1:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if kind not in (KIND_DIN, KIND_DRN):
        raise FormatError(f"{path}: unknown dataset kind {kind}")
    width = m + (k if kind == KIND_DIN else 2 ** k)
    body = np.frombuffer(blob, dtype="<f4", offset=8 + 21)
    if body.size != count * width:
        raise FormatError(
            f"{path}: payload holds {body.size} values, header implies {count * width}")
    body = body.reshape(count, width)
    return Dataset(kind, m, k, body[:, :m].copy(), body[:, m:].copy())


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def gen_din_dataset(count: int, box: ParameterBox, proto: ProtocolConfig,
                    noise: NoiseSpec, master_seed: int, m: int = 250) -> Dataset:
    """Initial-guess training data: normalized curve -> normalized parameters."""
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    inputs = np.empty((count, m), dtype=np.float32)
    targets = np.empty((count, box.k), dtype=np.float32)
    times = np.linspace(0.0, proto.duration, m)
    for i in range(count):
        rng = record_rng(master_seed, i)
        theta = sample_params(rng, box)
        values = kvfd.curve_values(theta, proto, times)
        if noise.family is not NoiseFamily.NONE and noise.scale > 0.0:
            values = add_noise(Curve(proto, times, values), noise, rng).values
        inputs[i] = normalize_curve(values)
        targets[i] = normalize_params(theta, box)
    return Dataset(KIND_DIN, m, box.k, inputs, targets)


def gen_drn_dataset(count: int, box: ParameterBox, proto: ProtocolConfig,
                    step_frac: float, reward_cfg, master_seed: int,
                    m: int = 250, near_fraction: float = 0.0,
                    near_scale: float = 0.05) -> Dataset:
    """Reward training data: curve residual -> per-action global rewards.

    For each record a true and a current parameter triple are drawn; the
    stored input is the residual between their curves divided by the true
    curve's peak magnitude (the same scaling the fitter applies before
    querying the network) and the targets are the global rewards of all
    2^k post-action configurations.

    With independent uniform draws almost every residual is large, so the
    small-residual regime the fitter visits near convergence is never
    represented.  ``near_fraction`` routes that share of records through a
    near-pair draw: the current triple is the true one offset by a uniform
    perturbation whose per-record scale spans [near_scale/100, near_scale]
    log-uniformly in box coordinates.
    """
    from . import optimizer

    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if not (step_frac > 0.0):
        raise DomainError(f"step_frac must be > 0, got {step_frac}")
    if not (0.0 <= near_fraction <= 1.0) or not (near_scale > 0.0):
        raise DomainError("near_fraction must be in [0,1] and near_scale > 0")
    actions = optimizer.enumerate_actions(box.k)
    n_act = len(actions)
    inputs = np.empty((count, m), dtype=np.float32)
    targets = np.empty((count, n_act), dtype=np.float32)
    times = np.linspace(0.0, proto.duration, m)
    for i in range(count):
        rng = record_rng(master_seed, i)
        theta = sample_params(rng, box)
        if near_fraction > 0.0 and rng.random() < near_fraction:
            scale = near_scale * 10.0 ** rng.uniform(-2.0, 0.0)
            u_hat = np.clip(normalize_params(theta, box)
                            + scale * rng.uniform(-1.0, 1.0, box.k), 0.0, 1.0)
            theta_hat = denormalize_params(u_hat, box)
        else:
            theta_hat = sample_params(rng, box)
        y_true = kvfd.curve_values(theta, proto, times)
        y_hat = kvfd.curve_values(theta_hat, proto, times)
        y_scale = float(np.max(np.abs(y_true)))
        inputs[i] = (y_true - y_hat) / y_scale
        u_true = normalize_params(theta, box)
        for j, action in enumerate(actions):
            cand = optimizer.apply_action(theta_hat, action, step_frac, box)
            y_cand = kvfd.curve_values(cand, proto, times)
            mae = float(np.mean(np.abs(y_true - y_cand))) / y_scale
            r_c = optimizer.reward_curve(mae, reward_cfg)
            r_t = optimizer.reward_theta(u_true, normalize_params(cand, box))
            targets[i, j] = optimizer.reward_global(r_t, r_c, reward_cfg)
    return Dataset(KIND_DRN, m, box.k, inputs, targets)


def split_dataset(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic shuffled split; sizes floor(f1 n) / floor(f2 n) / rest."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise DomainError(f"fractions must be 3 values summing to 1, got {fractions}")
    n = len(ds)
    perm = np.random.default_rng(seed).permutation(n)
    n1 = int(fractions[0] * n)
    n2 = int(fractions[1] * n)
    parts = (perm[:n1], perm[n1:n1 + n2], perm[n1 + n2:])
    return tuple(
        Dataset(ds.kind, ds.m, ds.k, ds.inputs[idx], ds.targets[idx])
        for idx in parts
    )

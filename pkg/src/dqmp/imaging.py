"""Evaluation metrics, the quadrant-phantom experiment, and noise sweeps.

A phantom is a small parameter map; every pixel gets a synthetic noisy
curve which each fitter must invert. Reports collect per-parameter
relative-error statistics, goodness of fit, and Pearson correlation
against the ground truth.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import datagen, kvfd
from .datagen import DEFAULT_BOX, NoiseSpec, add_noise, record_rng
from .errors import DomainError
from .kvfd import Curve, ParameterVector, Protocol, ProtocolConfig
from .optimizer import FitResult

__all__ = [
    "r_squared", "relative_error", "pearson_r",
    "PhantomSpec", "ParamImage", "MetricsReport",
    "default_phantom", "phantom_curves", "run_phantom", "run_noise_sweep",
    "export_image", "write_report_table",
]

PARAM_NAMES = ("e0", "alpha", "tau")


def r_squared(observed, fitted) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot."""
    obs = np.asarray(observed, dtype=float)
    fit = np.asarray(fitted, dtype=float)
    if obs.shape != fit.shape or obs.size < 2:
        raise DomainError("r_squared needs two equal-length series of >= 2 points")
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("r_squared undefined for a constant observed series")
    return 1.0 - float(np.sum((obs - fit) ** 2)) / ss_tot


def relative_error(est: ParameterVector, truth: ParameterVector) -> np.ndarray:
    """Signed percent error per parameter, 100*(est - truth)/truth."""
    t = truth.as_array()
    if np.any(t == 0.0):
        raise DomainError("relative_error needs nonzero true parameters")
    return 100.0 * (est.as_array() - t) / t


def pearson_r(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise DomainError("pearson_r needs two equal-length series of >= 3 points")
    xd = x - x.mean()
    yd = y - y.mean()
    denom = math.sqrt(float(np.sum(xd ** 2)) * float(np.sum(yd ** 2)))
    if denom == 0.0:
        raise DomainError("pearson_r undefined when a series is constant")
    return float(np.sum(xd * yd)) / denom


@dataclass(frozen=True)
class PhantomSpec:
    """Ground-truth parameter map plus acquisition settings.

    ``regions`` is a list of ((row0, col0, row1, col1), ParameterVector)
    with half-open pixel rectangles that must tile the grid exactly.
    """

    grid: tuple
    regions: tuple
    noise: NoiseSpec
    protocol: ProtocolConfig
    m: int = 250

    def __post_init__(self):
        rows, cols = self.grid
        if rows < 1 or cols < 1:
            raise DomainError(f"grid must be at least 1x1, got {self.grid}")
        object.__setattr__(self, "regions", tuple(self.regions))
        cover = np.zeros(self.grid, dtype=int)
        for (r0, c0, r1, c1), _ in self.regions:
            if not (0 <= r0 < r1 <= rows and 0 <= c0 < c1 <= cols):
                raise DomainError(f"region ({r0},{c0},{r1},{c1}) exceeds the grid")
            cover[r0:r1, c0:c1] += 1
        if np.any(cover != 1):
            raise DomainError("regions must tile the grid without gaps or overlap")

    def truth_at(self, row: int, col: int) -> ParameterVector:
        for (r0, c0, r1, c1), theta in self.regions:
            if r0 <= row < r1 and c0 <= col < c1:
                return theta
        raise DomainError(f"pixel ({row},{col}) outside the grid")


def default_phantom(noise: NoiseSpec = None,
                    protocol: ProtocolConfig = None, m: int = 250) -> PhantomSpec:
    """16x16 phantom with four 8x8 quadrants of distinct parameter triples."""
    if protocol is None:
        protocol = ProtocolConfig(Protocol.RAMP_RELAXATION, ramp_time=2.0,
                                  hold_time=3.0, probe_radius=8.5e-6,
                                  max_depth=5e-6)
    if noise is None:
        # gaussian with variance 1e-6, i.e. standard deviation 1e-3,
        # relative to the per-curve peak magnitude
        noise = NoiseSpec(datagen.NoiseFamily.GAUSSIAN, 1e-3, relative=True)
    regions = (
        ((0, 0, 8, 8), ParameterVector(20_000.0, 0.7, 800.0)),
        ((0, 8, 8, 16), ParameterVector(40_000.0, 0.5, 600.0)),
        ((8, 0, 16, 8), ParameterVector(60_000.0, 0.3, 400.0)),
        ((8, 8, 16, 16), ParameterVector(80_000.0, 0.1, 200.0)),
    )
    return PhantomSpec((16, 16), regions, noise, protocol, m)


@dataclass
class ParamImage:
    grid: tuple
    channels: dict      # name -> 2-D array
    fits: list          # row-major per-pixel FitResult

    def channel(self, name: str) -> np.ndarray:
        return self.channels[name]


@dataclass
class MetricsReport:
    name: str
    mean_err: np.ndarray    # signed percent, per parameter
    std_err: np.ndarray
    mean_r2: float
    pearson: np.ndarray     # per parameter, nan when truth is constant
    seconds: float
    n_fits: int
    failed: int = 0

    def row(self, include_timing: bool = True) -> str:
        cells = [f"{self.mean_err[i]:+.2f}+-{self.std_err[i]:.2f}%"
                 for i in range(3)]
        pr = "/".join("nan" if np.isnan(p) else f"{p:.3f}" for p in self.pearson)
        timing = f"{self.seconds:.1f}s  " if include_timing else ""
        return (f"{self.name:<10} E0 {cells[0]:>15} alpha {cells[1]:>15} "
                f"tau {cells[2]:>15}  R2 {self.mean_r2:.4f}  r {pr}  "
                f"{timing}failed {self.failed}")

    def csv_row(self, include_timing: bool = True) -> str:
        vals = [self.name]
        for i in range(3):
            vals += [repr(float(self.mean_err[i])), repr(float(self.std_err[i]))]
        vals += [repr(float(self.mean_r2))]
        vals += ["" if np.isnan(p) else repr(float(p)) for p in self.pearson]
        if include_timing:
            vals += [f"{self.seconds!r}"]
        vals += [str(self.n_fits), str(self.failed)]
        return ",".join(vals)


CSV_HEADER = ("method,e0_mean,e0_std,alpha_mean,alpha_std,tau_mean,tau_std,"
              "r2_mean,pearson_e0,pearson_alpha,pearson_tau,seconds,n,failed")
CSV_HEADER_NO_TIMING = CSV_HEADER.replace("seconds,", "")


def _metrics(name, truths, fits, seconds, failed) -> MetricsReport:
    errs = np.array([relative_error(f.theta_hat, t)
                     for t, f in zip(truths, fits)])
    truth_arr = np.array([t.as_array() for t in truths])
    est_arr = np.array([f.theta_hat.as_array() for f in fits])
    pear = np.empty(3)
    for i in range(3):
        try:
            pear[i] = pearson_r(truth_arr[:, i], est_arr[:, i])
        except DomainError:
            pear[i] = math.nan
    return MetricsReport(
        name=name,
        mean_err=errs.mean(axis=0),
        std_err=errs.std(axis=0),
        mean_r2=float(np.mean([f.r_squared for f in fits])),
        pearson=pear,
        seconds=seconds,
        n_fits=len(fits),
        failed=failed,
    )


def phantom_curves(spec: PhantomSpec, master_seed: int):
    """Noisy per-pixel curves in row-major order, with their truths.

    The noise stream is derived from (master_seed, pixel index), so every
    fitter sees bit-identical inputs.
    """
    rows, cols = spec.grid
    out = []
    for idx in range(rows * cols):
        row, col = divmod(idx, cols)
        theta = spec.truth_at(row, col)
        clean = kvfd.sample_curve(theta, spec.protocol, spec.m)
        noisy = add_noise(clean, spec.noise, record_rng(master_seed, idx))
        out.append((theta, noisy))
    return out


def _guarded_fit(fn, proto, theta, curve):
    try:
        return fn(curve, proto, theta), False
    except Exception:
        # a failed pixel keeps the image rectangular: fall back to the box
        # midpoint so downstream stats stay computable
        mid = datagen.denormalize_params(np.full(3, 0.5))
        return FitResult(theta_hat=mid, r_squared=0.0, mae=math.inf,
                         iterations=0, terminated_by="stalled"), True


def run_phantom(spec: PhantomSpec, fitters, master_seed: int = 0,
                n_jobs: int = 1):
    """Fit every phantom pixel with every fitter.

    ``fitters`` maps a method name to a callable ``fn(curve, protocol,
    truth) -> FitResult`` (the truth argument supports oracle test modes;
    real fitters ignore it). Returns (images, reports) keyed by name.
    ``n_jobs`` > 1 fits pixels in a thread pool; results are aggregated in
    pixel order either way.
    """
    if not fitters:
        raise DomainError("run_phantom needs at least one fitter")
    pixels = phantom_curves(spec, master_seed)
    truths = [t for t, _ in pixels]
    images = {}
    reports = {}
    rows, cols = spec.grid
    for name, fn in fitters.items():
        t0 = time.perf_counter()
        if n_jobs > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                outcomes = list(pool.map(
                    lambda px: _guarded_fit(fn, spec.protocol, px[0], px[1]),
                    pixels))
        else:
            outcomes = [_guarded_fit(fn, spec.protocol, theta, curve)
                        for theta, curve in pixels]
        fits = [f for f, _ in outcomes]
        failed = sum(1 for _, bad in outcomes if bad)
        seconds = time.perf_counter() - t0
        channels = {
            pname: np.array([f.theta_hat.as_array()[i] for f in fits]
                            ).reshape(rows, cols)
            for i, pname in enumerate(PARAM_NAMES)
        }
        images[name] = ParamImage(spec.grid, channels, fits)
        reports[name] = _metrics(name, truths, fits, seconds, failed)
    return images, reports


def run_noise_sweep(theta: ParameterVector, protocols, noise_specs,
                    n_curves: int, fitter, master_seed: int = 0):
    """Error statistics of one fitter over protocols x noise families.

    Returns {(protocol label, noise label): MetricsReport}; each cell fits
    ``n_curves`` independently noised replicas of the theta curve.
    """
    if n_curves < 1:
        raise DomainError("n_curves must be >= 1")
    results = {}
    for pi, proto in enumerate(protocols):
        clean = kvfd.sample_curve(theta, proto, 250)
        for ni, (nlabel, nspec) in enumerate(noise_specs):
            t0 = time.perf_counter()
            fits = []
            failed = 0
            for rep in range(n_curves):
                idx = (pi * len(noise_specs) + ni) * n_curves + rep
                noisy = add_noise(clean, nspec, record_rng(master_seed, idx))
                try:
                    fits.append(fitter(noisy, proto, theta))
                except Exception:
                    failed += 1
            seconds = time.perf_counter() - t0
            if not fits:
                raise DomainError(
                    f"every fit failed in cell ({proto.protocol.name}, {nlabel})")
            rep_name = f"{proto.protocol.name}/{nlabel}"
            results[(proto.protocol.name, nlabel)] = _metrics(
                rep_name, [theta] * len(fits), fits, seconds, failed)
    return results


def export_image(img: ParamImage, path_prefix):
    """Write one CSV matrix plus a 16-bit PGM and window sidecar per channel."""
    written = []
    for name in PARAM_NAMES:
        chan = np.asarray(img.channels[name], dtype=float)
        csv_path = f"{path_prefix}_{name}.csv"
        with open(csv_path, "w", newline="\n") as fh:
            for row in chan:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        lo = float(chan.min())
        hi = float(chan.max())
        span = hi - lo
        if span == 0.0:
            gray = np.zeros(chan.shape, dtype=np.uint16)
        else:
            gray = np.round((chan - lo) / span * 65535.0).astype(np.uint16)
        rows, cols = chan.shape
        pgm_path = f"{path_prefix}_{name}.pgm"
        with open(pgm_path, "wb") as fh:
            fh.write(f"P5 {cols} {rows} 65535\n".encode("ascii"))
            fh.write(gray.astype(">u2").tobytes())
        window_path = f"{path_prefix}_{name}.window.txt"
        with open(window_path, "w", newline="\n") as fh:
            fh.write(f"channel = {name}\nmin = {lo!r}\nmax = {hi!r}\n")
        written += [csv_path, pgm_path, window_path]
    return written


def write_report_table(reports, path, include_timing: bool = True):
    """Flat text table plus a machine-readable CSV twin.

    Timings can be left out so repeated runs with the same seed produce
    byte-identical files.
    """
    items = list(reports.values()) if isinstance(reports, dict) else list(reports)
    with open(path, "w", newline="\n") as fh:
        for rep in items:
            fh.write(rep.row(include_timing) + "\n")
    csv_path = f"{path}.csv"
    with open(csv_path, "w", newline="\n") as fh:
        fh.write((CSV_HEADER if include_timing else CSV_HEADER_NO_TIMING) + "\n")
        for rep in items:
            fh.write(rep.csv_row(include_timing) + "\n")
    return [str(path), csv_path]

"""Fit one noisy relaxation curve with the QL walk and the least-squares baseline.

Simulates a ramp-and-hold indentation at the reference settings, corrupts it
with additive Gaussian noise, and compares the two training-free estimators.
Run from the repository root:

    python3 demos/fit_single_curve.py
"""

import numpy as np

from dqmp import baselines, datagen, kvfd
from dqmp.kvfd import ParameterVector, Protocol, ProtocolConfig

RELAX = ProtocolConfig(Protocol.RAMP_RELAXATION, ramp_time=2.0, hold_time=3.0,
                       probe_radius=8.5e-6, max_depth=5e-6)


def main():
    truth = ParameterVector(20_000.0, 0.2, 50.0)
    clean = kvfd.sample_curve(truth, RELAX, 250)
    rng = np.random.default_rng(7)
    noisy = datagen.add_noise(
        clean, datagen.NoiseSpec(datagen.NoiseFamily.GAUSSIAN, 1e-7), rng)

    print(f"truth: E0={truth.e0:.0f} Pa  alpha={truth.alpha}  tau={truth.tau} s")
    print(f"peak force {np.max(np.abs(noisy.values)):.3e} N, "
          f"noise std 1e-7 N\n")

    # a coarse operator guess; in the full pipeline the initial network
    # supplies this (see demos/train_and_fit.py)
    guess = ParameterVector(30_000.0, 0.3, 100.0)
    for name, res in [
        ("QL", baselines.ql_fit(noisy, RELAX, din=None, init=guess)),
        ("LSM", baselines.lm_fit(noisy, RELAX)),
    ]:
        err = 100.0 * (res.theta_hat.as_array() - truth.as_array()) / truth.as_array()
        print(f"{name}: E0 {res.theta_hat.e0:9.1f} ({err[0]:+6.1f}%)  "
              f"alpha {res.theta_hat.alpha:.4f} ({err[1]:+6.1f}%)  "
              f"tau {res.theta_hat.tau:7.2f} ({err[2]:+6.1f}%)")
        print(f"     R2 {res.r_squared:.5f}  mae {res.mae:.2e}  "
              f"{res.iterations} iters, {res.terminated_by}")


if __name__ == "__main__":
    main()

"""Miniature end-to-end pipeline: generate data, train both networks, fit.

Everything is scaled down (2,000 records, 30-point curves, small hidden
layers) so the whole script runs in a few minutes on one core.  The
full-scale recipe behind the acceptance run lives in the test suite.

    python3 demos/train_and_fit.py
"""

import time

import numpy as np

from dqmp import datagen, kvfd, nnet, optimizer
from dqmp.kvfd import ParameterVector, Protocol, ProtocolConfig

RELAX = ProtocolConfig(Protocol.RAMP_RELAXATION, ramp_time=2.0, hold_time=3.0,
                       probe_radius=8.5e-6, max_depth=5e-6)
M = 30
N = 2000


def main():
    box = datagen.DEFAULT_BOX
    noise = datagen.NoiseSpec(datagen.NoiseFamily.GAUSSIAN, 1e-7)

    t0 = time.time()
    din_ds = datagen.gen_din_dataset(N, box, RELAX, noise, master_seed=1, m=M)
    drn_ds = datagen.gen_drn_dataset(N, box, RELAX, 0.01,
                                     optimizer.RewardConfig(), master_seed=2,
                                     m=M, near_fraction=0.5)
    print(f"generated 2x{N} records in {time.time() - t0:.0f}s")

    tcfg = nnet.TrainConfig(epochs=6, batch_size=64, learning_rate=3e-3,
                            seed=0, loss_space="normalized")
    din = nnet.Network.init(nnet.NetworkSpec(M, (16, 8), 3), seed=0)
    tr, va, _ = datagen.split_dataset(din_ds)
    hist = nnet.train(din, tr, tcfg, val_dataset=va)
    print(f"DIN val loss {hist.val_loss[-1]:.4f}")

    drn = nnet.Network.init(nnet.NetworkSpec(M, (16, 16), 8), seed=0)
    tr, va, _ = datagen.split_dataset(drn_ds)
    hist = nnet.train(drn, tr, tcfg, val_dataset=va)
    print(f"DRN val loss {hist.val_loss[-1]:.4f}\n")

    truth = ParameterVector(20_000.0, 0.2, 50.0)
    curve = datagen.add_noise(kvfd.sample_curve(truth, RELAX, M), noise,
                              np.random.default_rng(3))
    init = nnet.din_init(curve, din, box)
    print("DIN init:", np.round(init.as_array(), 4), "truth:", truth.as_array())

    res = optimizer.dqmp_fit(curve, RELAX, din, drn,
                             cfg=optimizer.DqmpConfig(max_iters=500))
    err = 100.0 * (res.theta_hat.as_array() - truth.as_array()) / truth.as_array()
    print(f"DQMP: E0 {res.theta_hat.e0:.1f} ({err[0]:+.1f}%)  "
          f"alpha {res.theta_hat.alpha:.4f} ({err[1]:+.1f}%)  "
          f"tau {res.theta_hat.tau:.2f} ({err[2]:+.1f}%)")
    print(f"R2 {res.r_squared:.5f}  mae {res.mae:.2e}  "
          f"{res.iterations} iters, {res.terminated_by}, "
          f"{res.drn_calls} reward-network calls")


if __name__ == "__main__":
    main()

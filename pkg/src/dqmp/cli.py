"""Command-line entry point for the whole pipeline.

Subcommands: gen, split, train, fit, phantom, noise-sweep, specfn, selftest.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import baselines, datagen, imaging, kvfd, nnet, optimizer, specfn
from .config import RunConfig, load_config
from .datagen import NoiseFamily, NoiseSpec
from .kvfd import ParameterVector

PRESET_DIR = Path(__file__).parent / "presets"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    top = _Parser(prog="dqmp", description=__doc__)
    top.add_argument("--seed", type=int, default=None,
                     help="override the config's master seed")
    top.add_argument("--threads", type=int, default=1,
                     help="worker threads for pixel fits; 1 is bit-reproducible")
    sub = top.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", default=None,
                       help="run-config file (key = value lines)")
        return p

    p = with_config(sub.add_parser("gen", help="generate a training dataset"))
    p.add_argument("kind", choices=["din", "drn"])
    p.add_argument("--n", type=int, default=None, help="record count")
    p.add_argument("--out", required=True)

    p = sub.add_parser("split", help="split a dataset 8:1:1")
    p.add_argument("--data", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--split-seed", type=int, default=0)

    p = with_config(sub.add_parser("train", help="train a network"))
    p.add_argument(
        "kind", choices=["din", "drn"],
        help="din: curve -> initial parameter guess; drn: residual -> rewards")
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--curve-loss", action="store_true",
                   help="enable the model-curve term of the initial-guess loss")

    p = with_config(sub.add_parser("fit", help="fit one measured curve"))
    p.add_argument("method", choices=["dqmp", "ql", "lsm"])
    p.add_argument("--curve", required=True, help="curve CSV (t,value)")
    p.add_argument("--din", default=None, help="initial-guess network weights")
    p.add_argument("--drn", default=None, help="reward network weights")
    p.add_argument("--out", required=True)
    p.add_argument("--trajectory", default=None, help="write per-iteration CSV")

    p = with_config(sub.add_parser("phantom",
                                   help="four-quadrant imaging experiment"))
    p.add_argument("--methods", default="ql,lsm",
                   help="comma list from dqmp,ql,lsm")
    p.add_argument("--din", default=None)
    p.add_argument("--drn", default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = with_config(sub.add_parser("noise-sweep",
                                   help="noise-robustness error statistics"))
    p.add_argument("--method", choices=["dqmp", "ql", "lsm"], default="ql")
    p.add_argument("--din", default=None)
    p.add_argument("--drn", default=None)
    p.add_argument("--out", required=True, help="report path")

    p = sub.add_parser("specfn", help="special-function debugging")
    p.add_argument("action", choices=["eval"])
    p.add_argument("function", choices=["ml", "beta-inc", "beta", "gamma"])
    p.add_argument("args", nargs="*", type=float,
                   help="ml: alpha beta z; beta-inc: a x y; beta: x y; gamma: x")

    sub.add_parser("selftest", help="fast numerical self checks")
    return top


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    return cfg


def _load_net(path, what):
    if path is None:
        raise _UsageError(f"this invocation needs --{what} weights")
    return nnet.load_network(path)


def _cmd_gen(args) -> int:
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.n_records
    if args.kind == "din":
        ds = datagen.gen_din_dataset(n, cfg.box(), cfg.protocol_config(),
                                     cfg.noise_spec(), cfg.master_seed, m=cfg.m)
    else:
        ds = datagen.gen_drn_dataset(n, cfg.box(), cfg.protocol_config(),
                                     cfg.drn_step_frac, cfg.reward_config(),
                                     cfg.master_seed, m=cfg.m,
                                     near_fraction=cfg.drn_near_fraction,
                                     near_scale=cfg.drn_near_scale)
    datagen.write_dataset(args.out, ds)
    print(f"wrote {len(ds)} {args.kind} records to {args.out}")
    return 0


def _cmd_split(args) -> int:
    ds = datagen.read_dataset(args.data)
    parts = datagen.split_dataset(ds, seed=args.split_seed)
    for part, tag in zip(parts, ("train", "val", "test")):
        path = f"{args.out_prefix}_{tag}.ds"
        datagen.write_dataset(path, part)
        print(f"wrote {len(part)} records to {path}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config(args)
    ds = datagen.read_dataset(args.data)
    val = datagen.read_dataset(args.val) if args.val else None
    if args.kind == "din":
        spec = nnet.din_spec(m=ds.m, hidden=cfg.din_hidden, k=ds.k)
    else:
        spec = nnet.drn_spec(m=ds.m, hidden=cfg.drn_hidden, k=ds.k)
    net = nnet.Network.init(spec, seed=cfg.train_seed)
    proto = cfg.protocol_config() if (args.kind == "din" and args.curve_loss) else None
    hist = nnet.train(net, ds, cfg.train_config(), val_dataset=val, proto=proto,
                      box=cfg.box(), log=print)
    nnet.save_network(args.out, net)
    hist_path = f"{args.out}.history.csv"
    with open(hist_path, "w", newline="\n") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (tr, va) in enumerate(zip(hist.train_loss, hist.val_loss)):
            fh.write(f"{i},{tr!r},{va!r}\n")
    print(f"wrote weights to {args.out} and history to {hist_path}")
    return 0


def _fit_one(method, curve, proto, cfg: RunConfig, din, drn):
    if method == "dqmp":
        return optimizer.dqmp_fit(curve, proto, din, drn,
                                  cfg=cfg.dqmp_config(),
                                  reward_cfg=cfg.reward_config(),
                                  box=cfg.box())
    if method == "ql":
        init = None if din is not None else datagen.denormalize_params(
            np.full(3, 0.5), cfg.box())
        return baselines.ql_fit(curve, proto, din, cfg=cfg.dqmp_config(),
                                reward_cfg=cfg.reward_config(), box=cfg.box(),
                                init=init)
    return baselines.lm_fit(curve, proto, cfg.lm_config(), box=cfg.box(),
                            din=din)


def _cmd_fit(args) -> int:
    cfg = _config(args)
    proto = cfg.protocol_config()
    curve = kvfd.read_curve_csv(args.curve, proto)
    din = nnet.load_network(args.din) if args.din else None
    drn = nnet.load_network(args.drn) if args.drn else None
    if args.method == "dqmp":
        _load_net(args.din, "din")
        _load_net(args.drn, "drn")
    if args.trajectory:
        cfg.record_trajectory = True
    res = _fit_one(args.method, curve, proto, cfg, din, drn)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(res.report())
    if args.trajectory:
        res.write_trajectory_csv(args.trajectory)
    print(res.report(), end="")
    return 0


def _phantom_fitters(methods, cfg: RunConfig, din, drn):
    fitters = {}
    for name in methods:
        if name == "dqmp":
            if din is None or drn is None:
                raise _UsageError("method dqmp needs --din and --drn weights")
            fitters[name] = (lambda c, p, _t, d=din, r=drn:
                             _fit_one("dqmp", c, p, cfg, d, r))
        elif name == "ql":
            fitters[name] = lambda c, p, _t: _fit_one("ql", c, p, cfg, din, None)
        elif name == "lsm":
            fitters[name] = lambda c, p, _t: _fit_one("lsm", c, p, cfg, din, None)
        else:
            raise _UsageError(f"unknown method {name!r}")
    return fitters


def _cmd_phantom(args) -> int:
    cfg = _config(args)
    din = nnet.load_network(args.din) if args.din else None
    drn = nnet.load_network(args.drn) if args.drn else None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    fitters = _phantom_fitters(methods, cfg, din, drn)
    spec = imaging.default_phantom(noise=cfg.noise_spec(),
                                   protocol=cfg.protocol_config(), m=cfg.m)
    images, reports = imaging.run_phantom(spec, fitters, cfg.master_seed,
                                          n_jobs=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in images.items():
        imaging.export_image(img, out / name)
    imaging.write_report_table(reports, out / "report.txt", include_timing=False)
    for rep in reports.values():
        print(rep.row())
    return 0


def _matched_noise_specs(scale):
    """The four noise families at a common standard deviation."""
    return [(fam.value, NoiseSpec(fam, scale))
            for fam in (NoiseFamily.GAUSSIAN, NoiseFamily.UNIFORM,
                        NoiseFamily.RAYLEIGH, NoiseFamily.EXPONENTIAL)]


def _cmd_noise_sweep(args) -> int:
    cfg = _config(args)
    din = nnet.load_network(args.din) if args.din else None
    drn = nnet.load_network(args.drn) if args.drn else None
    if args.method == "dqmp" and (din is None or drn is None):
        raise _UsageError("method dqmp needs --din and --drn weights")
    theta = ParameterVector(20_000.0, 0.2, 50.0)
    noise_specs = ([("none", NoiseSpec())] if cfg.noise_scale == 0.0
                   else _matched_noise_specs(cfg.noise_scale))
    cells = imaging.run_noise_sweep(theta, [cfg.protocol_config()], noise_specs,
                                    cfg.n_curves,
                                    lambda c, p, _t: _fit_one(args.method, c, p,
                                                              cfg, din, drn),
                                    cfg.master_seed)
    imaging.write_report_table(cells, args.out, include_timing=False)
    for rep in cells.values():
        print(rep.row())
    return 0


def _cmd_specfn(args) -> int:
    want = {"ml": 3, "beta-inc": 3, "beta": 2, "gamma": 1}[args.function]
    if len(args.args) != want:
        raise _UsageError(f"specfn eval {args.function} takes {want} numbers")
    if args.function == "ml":
        value = specfn.mittag_leffler(*args.args)
    elif args.function == "beta-inc":
        value = specfn.beta_incomplete(*args.args)
    elif args.function == "beta":
        value = specfn.beta_complete(*args.args)
    else:
        value = specfn.gamma(args.args[0])
    print(repr(value))
    return 0


def _cmd_selftest(args) -> int:
    failures = []

    def check(label, ok):
        print(f"{'ok  ' if ok else 'FAIL'} {label}")
        if not ok:
            failures.append(label)

    zs = np.linspace(-5.0, 5.0, 21)
    check("exponential identity",
          max(abs(specfn.mittag_leffler(1.0, 1.0, z) - math.exp(z))
              / abs(math.exp(z)) for z in zs) < 1e-10)
    xs = np.linspace(0.1, 10.0, 20)
    check("cosine identity",
          max(abs(specfn.mittag_leffler(2.0, 1.0, -x * x) - math.cos(x))
              for x in xs) < 1e-10)

    proto = kvfd.ProtocolConfig(kvfd.Protocol.RAMP_RELAXATION, ramp_time=2.0,
                                hold_time=3.0, probe_radius=8.5e-6,
                                max_depth=5e-6)
    theta = ParameterVector(20_000.0, 0.2, 50.0)
    eps = 1e-9
    before = kvfd.curve_values(theta, proto, np.array([2.0 - eps]))[0]
    after = kvfd.curve_values(theta, proto, np.array([2.0 + eps]))[0]
    check("relaxation branch continuity",
          abs(after - before) / abs(before) < 1e-6)

    net = nnet.Network.init(nnet.NetworkSpec(10, (4,), 3), seed=0)
    rng = np.random.default_rng(0)
    check("gradient check",
          nnet.grad_check(net, rng.normal(size=10), rng.random(3)) < 1e-4)

    check("q-update arithmetic",
          abs(optimizer.q_update(0.0, 1.0, 1.0, 0.6, 0.5) - 0.9) < 1e-12)
    check("curve-reward midpoint",
          abs(optimizer.reward_curve(1e-5, optimizer.RewardConfig()) - 0.5) < 1e-12)

    if failures:
        print(f"{len(failures)} check(s) failed", file=sys.stderr)
        return 2
    print("all checks passed")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "split": _cmd_split,
    "train": _cmd_train,
    "fit": _cmd_fit,
    "phantom": _cmd_phantom,
    "noise-sweep": _cmd_noise_sweep,
    "specfn": _cmd_specfn,
    "selftest": _cmd_selftest,
}


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except SystemExit as exc:
        # argparse exits directly for --help; keep its code for that path
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

"""Self-contained LSTM sequence-network engine with L1-family losses.

Implements everything the two estimator networks need and nothing more:
stacked LSTM layers fed one scalar per time step, rectifier couplings
between layers, a fully connected sigmoid read-out, L1 losses, Adam/SGD
training with backpropagation through time, finite-difference gradient
checking, and a bit-exact binary weight container.

Training runs in 64-bit arithmetic (which is what makes the gradient check
meaningful); serialized weights are 32-bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import datagen, kvfd
from .datagen import Dataset, KIND_DIN, KIND_DRN, ParameterBox
from .errors import AccuracyError, DomainError, FormatError
from .kvfd import Curve, ParameterVector, ProtocolConfig

__all__ = [
    "NetworkSpec",
    "Network",
    "TrainConfig",
    "TrainHistory",
    "forward",
    "loss_reward",
    "loss_initial",
    "train",
    "grad_check",
    "din_init",
    "drn_predict",
    "save_network",
    "load_network",
]


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description.

    ``input_scale`` multiplies raw input sequences before the first LSTM
    layer; it compensates for the tiny physical units of force residuals
    and is serialized with the weights so training and inference always
    agree.
    """

    input_len: int
    lstm_layers: tuple
    fc_out: int
    input_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "lstm_layers", tuple(int(h) for h in self.lstm_layers))
        if self.input_len < 1 or self.fc_out < 1 or not self.lstm_layers:
            raise DomainError(f"all network sizes must be >= 1: {self}")
        if any(h < 1 for h in self.lstm_layers):
            raise DomainError(f"LSTM hidden sizes must be >= 1: {self.lstm_layers}")
        if not (self.input_scale > 0.0 and math.isfinite(self.input_scale)):
            raise DomainError(f"input_scale must be positive, got {self.input_scale}")


def din_spec(m: int = 250, hidden=(64, 32), k: int = 3) -> NetworkSpec:
    """Initial-guess network default: two LSTM layers, k outputs."""
    return NetworkSpec(m, hidden, k, input_scale=1.0)


def drn_spec(m: int = 250, hidden=(64, 64, 64), k: int = 3) -> NetworkSpec:
    """Reward network default: three LSTM layers, 2^k outputs."""
    return NetworkSpec(m, hidden, 2 ** k)


class Network:
    """A NetworkSpec plus its named weight tensors (the tensor store)."""

    def __init__(self, spec: NetworkSpec, params: dict):
        self.spec = spec
        self.params = params

    @staticmethod
    def init(spec: NetworkSpec, seed: int = 0) -> "Network":
        """Uniform +-1/sqrt(fan_in) init; forget-gate bias starts at +1."""
        rng = np.random.default_rng(seed)
        params = {}
        d = 1
        for l, h in enumerate(spec.lstm_layers):
            fan = d + h
            lim = 1.0 / math.sqrt(fan)
            params[f"lstm{l}.W"] = rng.uniform(-lim, lim, size=(fan, 4 * h))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0
            params[f"lstm{l}.b"] = b
            d = h
        lim = 1.0 / math.sqrt(d)
        params["fc.W"] = rng.uniform(-lim, lim, size=(d, spec.fc_out))
        params["fc.b"] = np.zeros(spec.fc_out)
        return Network(spec, params)

    def copy(self) -> "Network":
        return Network(self.spec, {k: v.copy() for k, v in self.params.items()})


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_full(net: Network, x: np.ndarray, need_cache: bool):
    """Batched forward pass; x has shape (batch, input_len)."""
    spec = net.spec
    if x.ndim != 2 or x.shape[1] != spec.input_len:
        raise DomainError(f"input shape {x.shape} does not match input_len {spec.input_len}")
    b = x.shape[0]
    seq = (x * spec.input_scale)[:, :, None]  # (B, T, 1)
    caches = []
    layer_h = []
    for l, hsz in enumerate(spec.lstm_layers):
        w, bias = net.params[f"lstm{l}.W"], net.params[f"lstm{l}.b"]
        h = np.zeros((b, hsz))
        c = np.zeros((b, hsz))
        steps = []
        hs = np.empty((b, spec.input_len, hsz))
        for t in range(spec.input_len):
            xt = seq[:, t, :]
            zin = np.hstack([xt, h])
            z = zin @ w + bias
            i = _sigmoid(z[:, :hsz])
            f = _sigmoid(z[:, hsz:2 * hsz])
            g = np.tanh(z[:, 2 * hsz:3 * hsz])
            o = _sigmoid(z[:, 3 * hsz:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t, :] = h
            if need_cache:
                steps.append((zin, i, f, g, o, c_prev, tc))
        if need_cache:
            caches.append(steps)
        layer_h.append(hs)
        # rectifier coupling into the next layer
        seq = np.maximum(hs, 0.0)
    last = seq[:, -1, :]  # relu of final hidden state
    u = last @ net.params["fc.W"] + net.params["fc.b"]
    y = _sigmoid(u)
    if not need_cache:
        return y, None
    return y, (x, layer_h, caches, last, u)


def forward(net: Network, x) -> np.ndarray:
    """Outputs in (0, 1); accepts a single sequence or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    y, _ = _forward_full(net, x, need_cache=False)
    return y[0] if single else y


def _backward_full(net: Network, cache, dy: np.ndarray) -> dict:
    """BPTT gradients of a scalar loss with output-gradient dy."""
    spec = net.spec
    x, layer_h, caches, last, u = cache
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    sig = _sigmoid(u)
    du = dy * sig * (1.0 - sig)
    grads["fc.W"] = last.T @ du
    grads["fc.b"] = du.sum(axis=0)
    dlast = du @ net.params["fc.W"].T

    t_len = spec.input_len
    b = x.shape[0]
    # external dh per step for the top layer: only the final step, through relu
    n_layers = len(spec.lstm_layers)
    dseq_above = None
    for l in range(n_layers - 1, -1, -1):
        hsz = spec.lstm_layers[l]
        hs = layer_h[l]
        if l == n_layers - 1:
            dh_ext = np.zeros((b, t_len, hsz))
            dh_ext[:, -1, :] = dlast * (hs[:, -1, :] > 0.0)
        else:
            dh_ext = dseq_above * (hs > 0.0)
        w = net.params[f"lstm{l}.W"]
        dw = grads[f"lstm{l}.W"]
        db = grads[f"lstm{l}.b"]
        d_in = w.shape[0] - hsz
        dseq_below = np.empty((b, t_len, d_in))
        dh_rec = np.zeros((b, hsz))
        dc = np.zeros((b, hsz))
        steps = caches[l]
        for t in range(t_len - 1, -1, -1):
            zin, i, f, g, o, c_prev, tc = steps[t]
            dh = dh_ext[:, t, :] + dh_rec
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.hstack([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            dw += zin.T @ dz
            db += dz.sum(axis=0)
            dzin = dz @ w.T
            dseq_below[:, t, :] = dzin[:, :d_in]
            dh_rec = dzin[:, d_in:]
            dc = dc * f
        dseq_above = dseq_below
    return grads


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def loss_reward(pred, target) -> float:
    """Sum of absolute reward errors over the action lattice."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DomainError(f"loss_reward shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.sum(np.abs(pred - target)))


def loss_initial(theta_true, theta_hat, curve_true, curve_hat,
                 beta_l_theta: float = 1.0, beta_l_curve: float = 1.0,
                 beta_i=(0.09, 0.9, 0.01)) -> float:
    """Weighted parameter relative error plus normalized curve error."""
    tt = np.asarray(theta_true, dtype=float)
    th = np.asarray(theta_hat, dtype=float)
    if np.any(tt == 0.0):
        raise DomainError("loss_initial: true parameters must be nonzero")
    param_term = float(np.sum(np.asarray(beta_i) * np.abs(th - tt) / np.abs(tt)))
    ct = np.asarray(curve_true, dtype=float)
    ch = np.asarray(curve_hat, dtype=float)
    peak = float(np.max(np.abs(ct)))
    if peak == 0.0:
        raise DomainError("loss_initial: reference curve is identically zero")
    curve_term = float(np.mean(np.abs(ch - ct))) / peak
    return beta_l_theta * param_term + beta_l_curve * curve_term


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" or "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    beta_l_theta: float = 1.0
    beta_l_curve: float = 1.0
    beta_i: tuple = (0.09, 0.9, 0.01)
    early_stop_patience: int = 0  # 0 disables early stopping
    curve_fd_step: float = 1e-4
    loss_space: str = "physical"  # "physical" or "normalized"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise DomainError("epochs must be >= 0 and batch_size >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")
        if self.loss_space not in ("physical", "normalized"):
            raise DomainError(f"unknown loss_space {self.loss_space!r}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for e, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
                fh.write(f"{e},{tr!r},{va!r}\n")


class _Adam:
    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= cfg.learning_rate * (self.m[k] / corr1) / (
                np.sqrt(self.v[k] / corr2) + cfg.adam_eps)


class _Sgd:
    def __init__(self, params, cfg):
        self.cfg = cfg

    def step(self, params, grads):
        for k in params:
            params[k] -= self.cfg.learning_rate * grads[k]


def _din_curve_term(u_batch, targets_norm, inputs, proto, box, m):
    """Normalized-curve L1 error of the candidate parameters, per sample."""
    times = np.linspace(0.0, proto.duration, m)
    out = np.empty(len(u_batch))
    for i, u in enumerate(u_batch):
        theta = datagen.denormalize_params(np.clip(u, 0.0, 1.0), box)
        y = datagen.normalize_curve(kvfd.curve_values(theta, proto, times))
        out[i] = float(np.mean(np.abs(y - inputs[i])))
    return out


def _batch_loss_and_dy(net, x, t, kind, cfg, proto, box):
    """Mean per-record loss over the batch and its output gradient."""
    y, cache = _forward_full(net, x, need_cache=True)
    n = len(x)
    if kind == KIND_DRN or proto is None or cfg.beta_l_curve == 0.0:
        # plain L1 to the stored targets (reward loss, or the parameter
        # term of the initial loss expressed in normalized coordinates)
        if kind == KIND_DIN:
            if cfg.loss_space == "normalized":
                # plain L1 on box coordinates; every record weighs the same
                loss = cfg.beta_l_theta * float(np.sum(np.abs(y - t))) / n
                dy = cfg.beta_l_theta * np.sign(y - t) / n
                return loss, y, cache, dy
            box = box or datagen.DEFAULT_BOX
            lows, highs = box.lows, box.highs
            # relative-error weighting in physical units
            theta_t = lows + t * (highs - lows)
            theta_h = lows + y * (highs - lows)
            w = np.asarray(cfg.beta_i) * (highs - lows) / np.abs(theta_t)
            loss = cfg.beta_l_theta * float(np.sum(w * np.abs(theta_h - theta_t))) / n
            dy = cfg.beta_l_theta * w * np.sign(theta_h - theta_t) / n
        else:
            loss = float(np.sum(np.abs(y - t))) / n
            dy = np.sign(y - t) / n
        return loss, y, cache, dy

    # Initial-guess loss with the curve term; the curve term's gradient is
    # taken by central differences in normalized coordinates.
    box = box or datagen.DEFAULT_BOX
    if cfg.loss_space == "normalized":
        loss_p = cfg.beta_l_theta * float(np.sum(np.abs(y - t))) / n
        dy = cfg.beta_l_theta * np.sign(y - t) / n
    else:
        lows, highs = box.lows, box.highs
        theta_t = lows + t * (highs - lows)
        theta_h = lows + y * (highs - lows)
        w = np.asarray(cfg.beta_i) * (highs - lows) / np.abs(theta_t)
        loss_p = cfg.beta_l_theta * float(np.sum(w * np.abs(theta_h - theta_t))) / n
        dy = cfg.beta_l_theta * w * np.sign(theta_h - theta_t) / n

    m = net.spec.input_len
    base = _din_curve_term(y, t, x, proto, box, m)
    loss_c = cfg.beta_l_curve * float(np.sum(base)) / n
    h = cfg.curve_fd_step
    for j in range(y.shape[1]):
        up = y.copy()
        up[:, j] = np.clip(up[:, j] + h, 0.0, 1.0)
        dn = y.copy()
        dn[:, j] = np.clip(dn[:, j] - h, 0.0, 1.0)
        span = up[:, j] - dn[:, j]
        span[span == 0.0] = 1.0
        slope = (_din_curve_term(up, t, x, proto, box, m)
                 - _din_curve_term(dn, t, x, proto, box, m)) / span
        dy[:, j] += cfg.beta_l_curve * slope / n
    return loss_p + loss_c, y, cache, dy


def _eval_loss(net, ds, kind, cfg, proto, box, batch: int = 256):
    total = 0.0
    for s in range(0, len(ds), batch):
        x = ds.inputs[s:s + batch].astype(float)
        t = ds.targets[s:s + batch].astype(float)
        loss, _, _, _ = _batch_loss_and_dy(net, x, t, kind, cfg, proto, box)
        total += loss * len(x)
    return total / len(ds)


def train(net: Network, dataset: Dataset, cfg: TrainConfig,
          val_dataset: Dataset = None, proto: ProtocolConfig = None,
          box: ParameterBox = None, log=None):
    """Mini-batch training; mutates ``net`` and returns a TrainHistory.

    For initial-guess datasets, passing ``proto`` enables the curve term of
    the loss (model curves are re-synthesized per candidate); without it
    only the weighted parameter term is optimized.
    """
    want = dataset.k if dataset.kind == KIND_DIN else 2 ** dataset.k
    if net.spec.fc_out != want:
        raise DomainError(
            f"network fc_out {net.spec.fc_out} does not match dataset target width {want}")
    if dataset.m != net.spec.input_len:
        raise DomainError(
            f"network input_len {net.spec.input_len} does not match dataset m {dataset.m}")
    if val_dataset is None:
        n_val = max(1, len(dataset) // 10)
        perm = np.random.default_rng(cfg.seed).permutation(len(dataset))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        val_dataset = Dataset(dataset.kind, dataset.m, dataset.k,
                              dataset.inputs[val_idx], dataset.targets[val_idx])
        dataset = Dataset(dataset.kind, dataset.m, dataset.k,
                          dataset.inputs[train_idx], dataset.targets[train_idx])

    opt = (_Adam if cfg.optimizer == "adam" else _Sgd)(net.params, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    hist = TrainHistory()
    best_val = math.inf
    best_params = None
    since_best = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        running = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            x = dataset.inputs[idx].astype(float)
            t = dataset.targets[idx].astype(float)
            loss, y, cache, dy = _batch_loss_and_dy(net, x, t, dataset.kind, cfg, proto, box)
            if not math.isfinite(loss):
                raise AccuracyError(f"training diverged at epoch {epoch}: loss={loss}")
            running += loss * len(idx)
            grads = _backward_full(net, cache, dy)
            opt.step(net.params, grads)
        hist.train_loss.append(running / len(dataset))
        val = _eval_loss(net, val_dataset, dataset.kind, cfg, proto, box)
        if not math.isfinite(val):
            raise AccuracyError(f"validation loss diverged at epoch {epoch}")
        hist.val_loss.append(val)
        if log is not None:
            log(f"epoch {epoch}: train {hist.train_loss[-1]:.6f} val {val:.6f}")
        if val < best_val:
            best_val = val
            best_params = {k: v.copy() for k, v in net.params.items()}
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop_patience and since_best >= cfg.early_stop_patience:
                break
    if best_params is not None:
        net.params = best_params
    return hist


def grad_check(net: Network, x, target, epsilon: float = 1e-5) -> float:
    """Max relative deviation of BPTT gradients vs central differences.

    Uses the L1 output loss; exercises every weight of every tensor for
    small networks (subsample automatically for larger ones).
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise DomainError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    target = np.asarray(target, dtype=float)
    if target.ndim == 1:
        target = target[None, :]
    y, cache = _forward_full(net, x, need_cache=True)
    signs = np.sign(y - target)
    grads = _backward_full(net, cache, signs)

    worst = 0.0
    rng = np.random.default_rng(12345)
    for name in sorted(net.params):
        w = net.params[name]
        flat = w.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= 200 else rng.choice(n, size=200, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            y_up = forward(net, x)
            flat[i] = orig - epsilon
            y_dn = forward(net, x)
            flat[i] = orig
            if np.any(np.sign(y_up - target) != np.sign(y_dn - target)):
                # the perturbation straddles an L1 kink; the central
                # difference is meaningless there, skip this weight
                continue
            fd = (float(np.sum(np.abs(y_up - target)))
                  - float(np.sum(np.abs(y_dn - target)))) / (2.0 * epsilon)
            an = grads[name].reshape(-1)[i]
            # the 1e-6 floor keeps FD roundoff (~1e-11 absolute) from
            # dominating the ratio on near-zero gradients
            denom = max(abs(fd), abs(an), 1e-6)
            worst = max(worst, abs(fd - an) / denom)
    return worst


# ---------------------------------------------------------------------------
# Estimator-facing wrappers
# ---------------------------------------------------------------------------


def din_init(curve: Curve, din: Network, box: ParameterBox = datagen.DEFAULT_BOX) -> ParameterVector:
    """Initial parameter guess from a measured curve.

    The curve is min-max normalized exactly as during dataset generation;
    the sigmoid outputs land inside the box by construction.
    """
    x = datagen.normalize_curve(curve.values)
    u = forward(din, x)
    return datagen.denormalize_params(u, box)


def drn_predict(residual, drn: Network) -> np.ndarray:
    """Predicted global reward per candidate action, each in (0, 1).

    Accepts one residual of length m or a batch (n, m).
    """
    return forward(drn, np.asarray(residual, dtype=float))


# ---------------------------------------------------------------------------
# Weight container: magic "DQMPNN1\0", u32 version, u32 tensor_count, then
# per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims..., f32 values.
# ---------------------------------------------------------------------------

_MAGIC = b"DQMPNN1\x00"


def save_network(path, net: Network):
    tensors = dict(net.params)
    spec = net.spec
    tensors["spec.input_len"] = np.array([spec.input_len], dtype=float)
    tensors["spec.lstm_layers"] = np.array(spec.lstm_layers, dtype=float)
    tensors["spec.fc_out"] = np.array([spec.fc_out], dtype=float)
    tensors["spec.input_scale"] = np.array([spec.input_scale], dtype=float)
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", 1, len(tensors)))
            for name in tensors:
                arr = np.asarray(tensors[name])
                blob = name.encode("utf-8")
                fh.write(struct.pack("<H", len(blob)))
                fh.write(blob)
                fh.write(struct.pack("<B", arr.ndim))
                for d in arr.shape:
                    fh.write(struct.pack("<I", d))
                fh.write(arr.astype("<f4").tobytes())
    except OSError as exc:
        raise FormatError(f"writing network {path}: {exc}") from exc


def load_network(path) -> Network:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"reading network {path}: {exc}") from exc
    if len(blob) < 16 or blob[:8] != _MAGIC:
        raise FormatError(f"{path}: not a network container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != 1:
        raise FormatError(f"{path}: unsupported network version {version}")
    off = 16
    tensors = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off)
            off += 4 * size
            tensors[name] = arr.reshape(dims).astype(float)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated tensor record") from exc
    try:
        spec = NetworkSpec(
            input_len=int(tensors.pop("spec.input_len")[0]),
            lstm_layers=tuple(int(h) for h in tensors.pop("spec.lstm_layers")),
            fc_out=int(tensors.pop("spec.fc_out")[0]),
            input_scale=float(tensors.pop("spec.input_scale")[0]),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: missing architecture metadata {exc}") from exc
    return Network(spec, tensors)

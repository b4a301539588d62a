"""Flat key-value run configuration shared by all CLI subcommands.

Format: UTF-8 text, one ``key = value`` per line, ``#`` starts a comment.
Unknown keys are errors so typos cannot silently fall back to defaults.
"""

from dataclasses import dataclass, fields, replace

from .baselines import LmConfig
from .datagen import NoiseFamily, NoiseSpec, ParameterBox
from .errors import FormatError
from .kvfd import Protocol, ProtocolConfig
from .nnet import TrainConfig
from .optimizer import DqmpConfig, RewardConfig

__all__ = ["RunConfig", "parse_config", "load_config"]


@dataclass
class RunConfig:
    """Every experiment knob with its default; see the builder methods."""

    # parameter box
    e0_min: float = 10.0
    e0_max: float = 1e5
    alpha_min: float = 0.01
    alpha_max: float = 0.99
    tau_min: float = 1.0
    tau_max: float = 1000.0
    # loading protocol
    protocol: str = "ramp_relaxation"
    ramp_time: float = 2.0
    hold_time: float = 3.0
    probe_radius: float = 8.5e-6
    max_depth: float = 5e-6
    max_force: float = 5e-6
    sigma0: float = 833.3
    plate_area: float = 0.0024
    # sampling
    m: int = 250
    master_seed: int = 0
    n_records: int = 1000
    drn_step_frac: float = 0.01
    drn_near_fraction: float = 0.0
    drn_near_scale: float = 0.05
    # noise
    noise_family: str = "none"
    noise_scale: float = 0.0
    noise_relative: bool = False
    noise_zero_mean: bool = True
    # training
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    train_seed: int = 0
    early_stop_patience: int = 0
    loss_space: str = "physical"
    din_hidden: tuple = (64, 32)
    drn_hidden: tuple = (64, 64, 64)
    # fitting loop
    xi: float = 0.6
    gamma: float = 0.5
    step_frac: float = 0.01
    max_iters: int = 2000
    mae_tol: float = 1e-8
    stall_window: int = 50
    lookahead: str = "reward"
    step_shrink: float = 0.3
    step_grow: float = 1.2
    min_step_frac: float = 1e-6
    record_trajectory: bool = False
    # rewards
    beta_g: float = 0.02
    beta_theta: float = 0.6
    beta_c: float = 0.4
    reward_e_min: float = 1e-10
    reward_e_max: float = 1.0
    # least squares
    lm_lambda0: float = 1e-3
    lm_lambda_up: float = 10.0
    lm_lambda_down: float = 0.1
    lm_max_iters: int = 200
    lm_gradient_tol: float = 1e-10
    lm_init_mode: str = "random_seeded"
    # experiments
    n_curves: int = 50

    def box(self) -> ParameterBox:
        return ParameterBox(e0=(self.e0_min, self.e0_max),
                            alpha=(self.alpha_min, self.alpha_max),
                            tau=(self.tau_min, self.tau_max))

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(Protocol(self.protocol), ramp_time=self.ramp_time,
                              hold_time=self.hold_time,
                              probe_radius=self.probe_radius,
                              max_depth=self.max_depth,
                              max_force=self.max_force, sigma0=self.sigma0,
                              plate_area=self.plate_area)

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(NoiseFamily(self.noise_family), self.noise_scale,
                         relative=self.noise_relative,
                         zero_mean=self.noise_zero_mean)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate,
                           optimizer=self.optimizer, seed=self.train_seed,
                           early_stop_patience=self.early_stop_patience,
                           loss_space=self.loss_space)

    def dqmp_config(self) -> DqmpConfig:
        return DqmpConfig(xi=self.xi, gamma=self.gamma,
                          step_frac=self.step_frac, max_iters=self.max_iters,
                          mae_tol=self.mae_tol, stall_window=self.stall_window,
                          lookahead=self.lookahead,
                          record_trajectory=self.record_trajectory,
                          step_shrink=self.step_shrink,
                          step_grow=self.step_grow,
                          min_step_frac=self.min_step_frac)

    def reward_config(self) -> RewardConfig:
        return RewardConfig(beta_g=self.beta_g, beta_theta=self.beta_theta,
                            beta_c=self.beta_c, e_min=self.reward_e_min,
                            e_max=self.reward_e_max)

    def lm_config(self) -> LmConfig:
        return LmConfig(lambda0=self.lm_lambda0, lambda_up=self.lm_lambda_up,
                        lambda_down=self.lm_lambda_down,
                        max_iters=self.lm_max_iters,
                        gradient_tol=self.lm_gradient_tol,
                        init_mode=self.lm_init_mode, seed=self.master_seed)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key, raw, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise FormatError(f"key {key!r}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise FormatError(f"key {key!r}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise FormatError(f"key {key!r}: expected a number, got {raw!r}") from exc
    if isinstance(default, tuple):
        try:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError as exc:
            raise FormatError(
                f"key {key!r}: expected comma-separated integers, got {raw!r}") from exc
    return raw


def parse_config(text: str, base: RunConfig = None) -> RunConfig:
    cfg = base or RunConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _coerce(key, raw, getattr(cfg, key))
    return replace(cfg, **updates)


def load_config(path, base: RunConfig = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)

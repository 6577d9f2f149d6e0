"""Echo state network whose recurrent matrix is a brain template.

The template is rescaled to the requested spectral radius and used as
``W_res``. Input weights are uniform in (-1, 1) times the input scaling, with
a leading bias column fed by a constant 1. Readouts are linear, one per
delay, fitted by ridge regression to reproduce the frame shown ``tau`` steps
earlier.

Two update rules are available:

``paper_eq1``
    ``x = tanh(a W_in [1; c] + (1 - a) W_res x_prev + b)``. With ``a = 1``
    the recurrence vanishes and the reservoir has no memory.
``standard_leaky``
    ``x = (1 - a) x_prev + a tanh(W_in [1; c] + W_res x_prev + b)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, DegenerateReservoirError, DimensionError, LagError, MissingReadoutError, SchemaError
from .linalg import centered_correlation, ridge_solve, spectral_radius

UPDATE_RULES = ("paper_eq1", "standard_leaky")
CHECKPOINT_VERSION = 1


@dataclass
class EsnConfig:
    spectral_radius: float = 0.98
    input_scaling: float = 1e-6
    leakage: float = 1.0
    bias: float = 0.0
    n_transient: int = 100
    update_rule: str = "paper_eq1"
    ridge_lambda: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.leakage <= 1.0:
            raise ValueError("leakage must lie in [0, 1]")
        if self.spectral_radius <= 0:
            raise ValueError("spectral_radius must be positive")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}")
        if self.n_transient < 0 or self.ridge_lambda < 0:
            raise ValueError("n_transient and ridge_lambda must be non-negative")


@dataclass
class EchoStateNetwork:
    w_in: np.ndarray
    w_res: np.ndarray
    config: EsnConfig
    readouts: dict = field(default_factory=dict)
    state: np.ndarray | None = None

    def __post_init__(self):
        if self.state is None:
            self.state = np.zeros(self.w_res.shape[0])

    @property
    def n_r(self) -> int:
        return self.w_res.shape[0]

    @property
    def n_c(self) -> int:
        return self.w_in.shape[1] - 1

    def reset(self) -> None:
        self.state = np.zeros(self.n_r)


def build_reservoir_from_connectome(cbt, cfg: EsnConfig, n_c: int) -> EchoStateNetwork:
    c = np.asarray(cbt, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"template must be square, got {c.shape}")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise DataError("template must be finite and nonnegative")
    radius = spectral_radius(c, seed=cfg.seed)
    if radius == 0.0:
        raise DegenerateReservoirError("template has zero spectral radius")
    rng = np.random.default_rng(cfg.seed)
    w_in = rng.uniform(-1.0, 1.0, size=(c.shape[0], n_c + 1)) * cfg.input_scaling
    return EchoStateNetwork(w_in=w_in, w_res=c * (cfg.spectral_radius / radius), config=cfg)


def step(esn: EchoStateNetwork, c) -> np.ndarray:
    u = np.asarray(c, dtype=np.float64).ravel()
    if u.size != esn.n_c:
        raise DimensionError(f"input has {u.size} entries, reservoir expects {esn.n_c}")
    cfg = esn.config
    drive = esn.w_in[:, 0] + esn.w_in[:, 1:] @ u
    a = cfg.leakage
    if cfg.update_rule == "paper_eq1":
        esn.state = np.tanh(a * drive + (1.0 - a) * (esn.w_res @ esn.state) + cfg.bias)
    else:
        esn.state = (1.0 - a) * esn.state + a * np.tanh(drive + esn.w_res @ esn.state + cfg.bias)
    return esn.state


def _flatten(seq) -> np.ndarray:
    f = np.asarray(seq, dtype=np.float64)
    if f.ndim == 3:
        f = f.reshape(f.shape[0], -1)
    if f.ndim != 2:
        raise DimensionError(f"sequence must be (T, n_x, n_y) or (T, n_c), got {f.shape}")
    return f


def harvest_states(esn: EchoStateNetwork, seq) -> np.ndarray:
    """States for every frame, shape ``(T, n_r)``.

    Starts from a zero state and first runs ``n_transient`` warm-up steps
    that replay the sequence from its start (cyclically), so all ``T`` frames
    produce retained states.
    """
    flat = _flatten(seq)
    T = flat.shape[0]
    if T <= 0:
        raise DataError("empty image sequence")
    esn.reset()
    for k in range(esn.config.n_transient):
        step(esn, flat[k % T])
    out = np.empty((T, esn.n_r))
    for t in range(T):
        out[t] = step(esn, flat[t])
    return out


def check_lags(lags, T: int) -> list:
    lags = [int(t) for t in lags]
    if not lags:
        raise LagError("no lags requested")
    for tau in lags:
        if tau < 0 or tau >= T:
            raise LagError(f"lag {tau} needs a sequence longer than {T} frames")
    return lags


def train_readouts(esn: EchoStateNetwork, seq, lags, states=None) -> tuple:
    """Fit one ridge readout per lag and return ``(esn, cognitive_loss)``.

    For lag ``tau`` the readout maps the state at ``t`` to frame ``t - tau``
    for ``t = tau .. T-1``. The loss averages, over lags, the mean squared
    reconstruction error per time step.
    """
    flat = _flatten(seq)
    T = flat.shape[0]
    lags = check_lags(lags, T)
    if states is None:
        states = harvest_states(esn, flat)
    if states.shape[0] != T:
        raise DimensionError("states and sequence lengths differ")
    total = 0.0
    for tau in lags:
        x = states[tau:]
        y = flat[:T - tau]
        w_out = ridge_solve(x, y, esn.config.ridge_lambda).T
        esn.readouts[tau] = w_out
        resid = x @ w_out.T - y
        total += float(np.sum(resid * resid)) / (T - tau)
    return esn, total / len(lags)


def lag_correlation(true_frames, predicted) -> float:
    """Delay correlation ``r_tau``: per-pixel time means removed, then a
    single correlation over all pixel-time samples."""
    a = _flatten(true_frames)
    b = _flatten(predicted)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    ca = a - a.mean(axis=0)
    cb = b - b.mean(axis=0)
    # pixels constant over time contribute exactly nothing
    ca[:, np.ptp(a, axis=0) == 0] = 0.0
    cb[:, np.ptp(b, axis=0) == 0] = 0.0
    return centered_correlation(ca, cb)


def predict(esn: EchoStateNetwork, states, tau: int) -> np.ndarray:
    if tau not in esn.readouts:
        raise MissingReadoutError(f"no trained readout for lag {tau}")
    return np.asarray(states) @ esn.readouts[tau].T


def memory_profile(esn: EchoStateNetwork, seq, lags, states=None, start: int = 0) -> dict:
    """``{tau: r_tau^2}`` over time steps ``t >= max(tau, start)``."""
    flat = _flatten(seq)
    T = flat.shape[0]
    lags = check_lags(lags, T)
    if states is None:
        states = harvest_states(esn, flat)
    out = {}
    for tau in lags:
        lo = max(tau, start)
        pred = predict(esn, states[lo:], tau)
        out[tau] = lag_correlation(flat[lo - tau:T - tau], pred) ** 2
    return out


def vis_mc(esn: EchoStateNetwork, seq, lags, states=None, start: int = 0) -> float:
    """Visual memory capacity: sum of squared delay correlations."""
    return float(sum(memory_profile(esn, seq, lags, states, start).values()))


def usable_lags(lags, n_train: int) -> list:
    """Lags a training window of ``n_train`` frames can fit."""
    return [int(t) for t in lags if 0 <= int(t) < n_train]


def recall_protocol(cbt, frames, cfg: EsnConfig, lags, n_train: int) -> dict:
    """Fit readouts on the first ``n_train`` frames, score the remainder.

    States are harvested once over the whole sequence, so the test window
    continues the training trajectory.
    """
    flat = _flatten(frames)
    T = flat.shape[0]
    if not 0 < n_train < T:
        raise LagError(f"need 0 < n_train < {T}")
    lags = usable_lags(lags, n_train)
    if not lags:
        raise LagError(f"no requested lag fits {n_train} training frames")
    esn = build_reservoir_from_connectome(cbt, cfg, flat.shape[1])
    states = harvest_states(esn, flat)
    esn, loss = train_readouts(esn, flat[:n_train], lags, states=states[:n_train])
    profile = memory_profile(esn, flat, lags, states=states, start=n_train)
    return {"esn": esn, "cog_loss": loss, "profile": profile, "vis_mc": float(sum(profile.values())), "lags": lags}


def esn_to_dict(esn: EchoStateNetwork) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "echo_state_network",
        "config": asdict(esn.config),
        "w_in": esn.w_in.tolist(),
        "w_res": esn.w_res.tolist(),
        "readouts": {str(k): v.tolist() for k, v in sorted(esn.readouts.items())},
    }


def esn_from_dict(d: dict, source="checkpoint") -> EchoStateNetwork:
    try:
        if d.get("format_version") != CHECKPOINT_VERSION or d.get("kind") != "echo_state_network":
            raise SchemaError(source, "unsupported reservoir checkpoint version/kind")
        return EchoStateNetwork(
            w_in=np.array(d["w_in"], dtype=np.float64),
            w_res=np.array(d["w_res"], dtype=np.float64),
            config=EsnConfig(**d["config"]),
            readouts={int(k): np.array(v, dtype=np.float64) for k, v in d["readouts"].items()},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(source, f"malformed reservoir checkpoint ({exc})") from exc

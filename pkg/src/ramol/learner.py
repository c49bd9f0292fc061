"""Per-step learners: the plain online MLP and its two retrieval-augmented variants.

Every step runs the same four stages:

1. standardize ``x_t`` with past statistics, forward it, and record the
   prediction before anything is updated;
2. retrieve neighbours of ``h_t`` from the buffer as it stood before this step;
3. take one SGD step on the variant's weighted loss;
4. insert ``(x_t, y_t, h_t)``, with ``h_t`` the pre-update embedding.

``ram_naive`` adds every retrieved neighbour with weight ``beta / |N|``.
``ram_gated`` applies a time window, a similarity gate and a normalised
re-weighting in which the current example keeps weight ``1 / (1 + alpha)``.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .memory import (
    Buffer,
    NeighbourSet,
    retrieve,
    similarity_gate,
    similarity_weights,
    uniform_weights,
)
from .model import (
    ACTIVATIONS,
    MlpParams,
    WeightedExample,
    cross_entropy,
    forward,
    init_params,
    sgd_step,
    weighted_grad_arrays,
)
from .stream import EPS, Example, StandardizerState, standardize

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

VARIANTS = ("baseline", "ram_naive", "ram_gated")
NO_DECAY_MODES = ("full_weight", "alpha_one")
DEFAULT_GATED_WINDOW = 2000
TAU_HISTORY = 256


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters of one learner.

    ``H="auto"`` resolves to no window for ``ram_naive`` and
    ``DEFAULT_GATED_WINDOW`` for ``ram_gated``; an explicit integer or
    ``None`` applies to both memory variants.  ``tau="adaptive"`` uses the
    median of recently retrieved neighbour distances.
    """

    variant: str = "ram_gated"
    B: int = 500
    K: int = 5
    H: int | None | str = "auto"
    tau: float | str = 1.0
    rho: float = 0.1
    alpha: float = 0.5
    beta: float = 1.0
    lr: float = 0.01
    lr_decay: bool = False
    hidden_dim: int = 64
    activation: str = "relu"
    seed: int = 0
    no_time: bool = False
    no_sim: bool = False
    no_decay: bool = False
    no_decay_mode: str = "full_weight"
    renormalize_gate: bool = True
    standardize: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.B < 1 or self.K < 1 or self.hidden_dim < 1:
            raise ValueError("B, K and hidden_dim must be positive")
        if isinstance(self.H, str):
            if self.H != "auto":
                raise ValueError(f"H must be an integer, None or 'auto', got {self.H!r}")
        elif self.H is not None and self.H < 0:
            raise ValueError("H must be nonnegative")
        if isinstance(self.tau, str):
            if self.tau != "adaptive":
                raise ValueError(f"tau must be positive or 'adaptive', got {self.tau!r}")
        elif not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.no_decay_mode not in NO_DECAY_MODES:
            raise ValueError(f"no_decay_mode must be one of {NO_DECAY_MODES}")
        if (self.no_time or self.no_sim or self.no_decay) and self.variant != "ram_gated":
            raise ValueError("ablation flags only apply to the ram_gated variant")

    def replace(self, **changes) -> "LearnerConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def window(self) -> int | None:
        """Retrieval window for this variant before ablations."""
        if self.H == "auto":
            return DEFAULT_GATED_WINDOW if self.variant == "ram_gated" else None
        return self.H


def load_config(path, **overrides) -> LearnerConfig:
    """Read a learner config from TOML.

    Keys are the :class:`LearnerConfig` field names, at top level or under a
    ``[learner]`` table.  ``H = "none"`` disables the window.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    data = dict(data.get("learner", data))
    if isinstance(data.get("H"), str) and data["H"].lower() == "none":
        data["H"] = None
    data.update({k: v for k, v in overrides.items() if v is not None})
    return LearnerConfig.from_dict(data)


@dataclass(frozen=True)
class GatingPlan:
    """Effective gated-retrieval behaviour after ablation flags are applied."""

    window: int | None
    use_similarity: bool
    alpha: float
    prefactor: bool


def apply_ablation(config: LearnerConfig) -> GatingPlan:
    if config.variant != "ram_gated":
        raise ValueError("ablations are defined for the ram_gated variant only")
    window = None if config.no_time else config.window()
    alpha, prefactor = config.alpha, True
    if config.no_decay:
        alpha = 1.0
        prefactor = config.no_decay_mode == "alpha_one"
    return GatingPlan(window, not config.no_sim, alpha, prefactor)


# --------------------------------------------------------------------------
# Loss weighting
# --------------------------------------------------------------------------


def naive_weights(n_neighbours: int, beta: float) -> tuple[float, np.ndarray]:
    if n_neighbours == 0:
        return 1.0, np.zeros(0)
    return 1.0, np.full(n_neighbours, beta / n_neighbours)


def gated_weights(w: np.ndarray, alpha: float, prefactor: bool = True) -> tuple[float, np.ndarray]:
    """(current weight, neighbour weights) of the gated loss.

    No surviving neighbours means a plain baseline update with weight 1.
    """
    if len(w) == 0:
        return 1.0, np.zeros(0)
    if prefactor:
        return 1.0 / (1.0 + alpha), alpha * w / (1.0 + alpha)
    return 1.0, alpha * w


def _as_batch(example: Example, ns: NeighbourSet, cur: float, nb: np.ndarray) -> list[WeightedExample]:
    batch = [WeightedExample(example.features, example.label, cur)]
    batch += [WeightedExample(ns.x[i], int(ns.y[i]), float(nb[i])) for i in range(len(ns))]
    return batch


def naive_batch(example: Example, ns: NeighbourSet, beta: float) -> list[WeightedExample]:
    cur, nb = naive_weights(len(ns), beta)
    return _as_batch(example, ns, cur, nb)


def gated_batch(example: Example, ns: NeighbourSet, alpha: float, prefactor: bool = True) -> list[WeightedExample]:
    if len(ns) and ns.w is None:
        raise ValueError("neighbour weights not computed")
    cur, nb = gated_weights(ns.w if len(ns) else np.zeros(0), alpha, prefactor)
    return _as_batch(example, ns, cur, nb)


# --------------------------------------------------------------------------
# Stepping
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepOutcome:
    prediction: int
    correct: int
    loss: float
    n_retrieved: int = 0
    n_after_gates: int = 0
    neighbour_label_matches: int = 0
    pre_gate_label_matches: int = 0
    retrieval_attempted: bool = False


@dataclass
class LearnerState:
    params: MlpParams
    buffer: Buffer | None
    standardizer: StandardizerState
    step: int = 0


class Learner:
    """One learner over one stream; call :meth:`step` once per example, in order."""

    def __init__(self, config: LearnerConfig, input_dim: int, n_classes: int):
        self.config = config
        self.input_dim = input_dim
        self.n_classes = n_classes
        params = init_params(input_dim, config.hidden_dim, n_classes, config.seed, config.activation)
        buffer = None if config.variant == "baseline" else Buffer(config.B, input_dim, config.hidden_dim)
        self.state = LearnerState(params, buffer, StandardizerState.empty(input_dim))
        self._plan = apply_ablation(config) if config.variant == "ram_gated" else None
        self._window = config.window() if config.variant == "ram_naive" else None
        self._dist_history: deque[float] = deque(maxlen=TAU_HISTORY * config.K)

    @property
    def params(self) -> MlpParams:
        return self.state.params

    @property
    def buffer(self) -> Buffer | None:
        return self.state.buffer

    def _tau(self) -> float:
        if self.config.tau != "adaptive":
            return self.config.tau
        if not self._dist_history:
            return 1.0
        return max(float(np.median(self._dist_history)), 1e-12)

    def preprocess(self, features) -> np.ndarray:
        """Standardize with past-only statistics and fold ``features`` into them."""
        if not self.config.standardize:
            return np.asarray(features, dtype=float)
        x, self.state.standardizer = standardize(self.state.standardizer, features)
        return x

    def step(self, example: Example) -> StepOutcome:
        cfg = self.config
        st = self.state
        t = st.step
        y = example.label
        if not 0 <= y < self.n_classes:
            raise ValueError(f"label {y} out of range for {self.n_classes} classes")

        x = self.preprocess(example.features)
        fr = forward(st.params, x)
        pred = int(np.argmax(fr.probs))
        loss = cross_entropy(fr.probs, y)

        n_ret = n_kept = matches = pre_matches = 0
        attempted = False
        nb_x = None
        cur_w = 1.0
        buf = st.buffer
        if buf is not None and len(buf) > 0:
            attempted = True
            if cfg.variant == "ram_naive":
                ns = retrieve(buf, fr.h, t, cfg.K, self._window)
                n_ret = n_kept = len(ns)
                pre_matches = matches = int(np.sum(ns.y == y))
                cur_w, nb_w = naive_weights(n_ret, cfg.beta)
            else:
                plan = self._plan
                ns = retrieve(buf, fr.h, t, cfg.K, plan.window)
                n_ret = len(ns)
                pre_matches = int(np.sum(ns.y == y))
                if n_ret:
                    if plan.use_similarity:
                        tau = self._tau()
                        if cfg.tau == "adaptive":
                            self._dist_history.extend(ns.d.tolist())
                        ns = similarity_gate(similarity_weights(ns, tau), cfg.rho, cfg.renormalize_gate)
                    else:
                        ns = uniform_weights(ns)
                n_kept = len(ns)
                matches = int(np.sum(ns.y == y))
                cur_w, nb_w = gated_weights(ns.w if n_kept else np.zeros(0), plan.alpha, plan.prefactor)
            if n_kept:
                nb_x, nb_y = ns.x, ns.y

        if nb_x is None:
            X = x[None, :]
            Y = np.array([y])
            W = np.array([cur_w])
        else:
            X = np.vstack([x[None, :], nb_x])
            Y = np.concatenate([[y], nb_y])
            W = np.concatenate([[cur_w], nb_w])
        grads = weighted_grad_arrays(st.params, X, Y, W)
        lr = cfg.lr / np.sqrt(t + 1.0) if cfg.lr_decay else cfg.lr
        st.params = sgd_step(st.params, grads, lr)

        if buf is not None:
            buf.insert_arrays(x, y, fr.h, t)
        st.step = t + 1
        return StepOutcome(pred, int(pred == y), loss, n_ret, n_kept, matches, pre_matches, attempted)

    def predict_proba(self, features) -> np.ndarray:
        """Class probabilities for raw ``features`` without touching any state."""
        x = np.asarray(features, dtype=float)
        if self.config.standardize:
            s = self.state.standardizer
            x = (x - s.mean) / np.sqrt(s.variance + EPS)
        return forward(self.state.params, x).probs


def run_learner(config: LearnerConfig, examples: Sequence[Example], input_dim: int, n_classes: int):
    """Step a fresh learner over ``examples``; returns (outcomes, learner)."""
    learner = Learner(config, input_dim, n_classes)
    return [learner.step(ex) for ex in examples], learner

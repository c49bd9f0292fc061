"""Example sources: CSV ingestion, past-only standardization and synthetic drift streams.

All sources yield :class:`Example` objects in strict temporal order.  Nothing
here looks ahead: a CSV row is parsed only when it is requested, and the
standardizer folds an example in only after it has been scaled.

Synthetic streams are piecewise stationary.  Each segment is a
:class:`RegimeSpec` whose generator is a per-class mixture of axis-aligned
Gaussians, so class-conditional densities (and therefore the Bayes rule and
total-variation distances between regimes) can be evaluated exactly.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

EPS = 1e-8
_LOG_2PI = math.log(2.0 * math.pi)


class StreamError(Exception):
    """Base class for data-source errors."""


class MalformedRowError(StreamError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class UnknownLabelError(StreamError):
    def __init__(self, row: int, value: str):
        self.row = row
        self.value = value
        super().__init__(f"row {row}: unknown label value {value!r}")


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    label: int
    step: int


# --------------------------------------------------------------------------
# Past-only standardization
# --------------------------------------------------------------------------


@dataclass
class StandardizerState:
    """Welford accumulator: ``sum_sq_dev`` is the running sum of squared deviations."""

    count: int
    mean: np.ndarray
    sum_sq_dev: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "StandardizerState":
        return cls(0, np.zeros(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def variance(self) -> np.ndarray:
        return self.sum_sq_dev / max(self.count, 1)

    def copy(self) -> "StandardizerState":
        return StandardizerState(self.count, self.mean.copy(), self.sum_sq_dev.copy())


def standardize(state: StandardizerState, x) -> tuple[np.ndarray, StandardizerState]:
    """Scale ``x`` with statistics of the past, then fold ``x`` in.

    The output is ``(x - mean) / sqrt(var + EPS)`` computed from ``state`` as
    it was *before* this call.  On the very first example (empty state) that
    is ``x / sqrt(EPS)``.  Returns a new state; ``state`` is not modified.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (state.dim,):
        raise ValueError(f"expected feature vector of shape ({state.dim},), got {x.shape}")
    z = (x - state.mean) / np.sqrt(state.variance + EPS)

    count = state.count + 1
    delta = x - state.mean
    mean = state.mean + delta / count
    sum_sq_dev = state.sum_sq_dev + delta * (x - mean)
    return z, StandardizerState(count, mean, sum_sq_dev)


def standardize_stream(examples: Iterator[Example]) -> Iterator[Example]:
    """Lazily standardize a stream of raw examples with past-only statistics."""
    state = None
    for ex in examples:
        if state is None:
            state = StandardizerState.empty(ex.features.shape[0])
        z, state = standardize(state, ex.features)
        yield Example(z, ex.label, ex.step)


# --------------------------------------------------------------------------
# CSV ingestion
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a CSV stream.

    ``features=None`` means every column other than ``label``.  When
    ``labels`` is given it fixes the label order (value -> index) and any
    other value is an error.  Otherwise labels that are all non-negative
    integers are used as class indices directly, and text labels are mapped
    in first-seen order.
    """

    label: str
    features: tuple[str, ...] | None = None
    labels: tuple[str, ...] | None = None
    delimiter: str = ","


class CsvStream:
    """Iterable over a CSV file; each iteration re-reads the file from the top.

    ``label_map`` records the label value -> class index mapping observed so
    far (it only grows as rows are read).
    """

    def __init__(self, path, schema: CsvSchema):
        self.path = os.fspath(path)
        self.schema = schema
        if not os.path.isfile(self.path):
            raise FileNotFoundError(f"no such data file: {self.path}")
        with open(self.path, newline="") as fh:
            header = next(csv.reader(fh, delimiter=schema.delimiter), None)
        if not header:
            raise StreamError(f"{self.path}: missing header row")
        header = [h.strip() for h in header]
        if schema.label not in header:
            raise StreamError(f"label column {schema.label!r} not in header {header}")
        if schema.features is None:
            feats = [h for h in header if h != schema.label]
        else:
            feats = list(schema.features)
            missing = [f for f in feats if f not in header]
            if missing:
                raise StreamError(f"feature columns {missing} not in header {header}")
        self.header = header
        self.feature_names = tuple(feats)
        self._feature_idx = [header.index(f) for f in feats]
        self._label_idx = header.index(schema.label)
        self.label_map: dict[str, int] = (
            {v: i for i, v in enumerate(schema.labels)} if schema.labels is not None else {}
        )
        self._integer_labels: bool | None = None

    @property
    def dim(self) -> int:
        return len(self._feature_idx)

    def _label(self, row: int, value: str) -> int:
        if self.schema.labels is not None:
            if value not in self.label_map:
                raise UnknownLabelError(row, value)
            return self.label_map[value]
        if self._integer_labels is None:
            self._integer_labels = value.isdigit()
        if self._integer_labels:
            if not value.isdigit():
                raise UnknownLabelError(row, value)
            self.label_map.setdefault(value, int(value))
            return int(value)
        if value not in self.label_map:
            self.label_map[value] = len(self.label_map)
        return self.label_map[value]

    def __iter__(self) -> Iterator[Example]:
        width = len(self.header)
        with open(self.path, newline="") as fh:
            reader = csv.reader(fh, delimiter=self.schema.delimiter)
            next(reader)
            for row, cells in enumerate(reader):
                if len(cells) != width:
                    raise MalformedRowError(row, f"expected {width} fields, got {len(cells)}")
                try:
                    x = np.array([float(cells[i]) for i in self._feature_idx])
                except ValueError as exc:
                    raise MalformedRowError(row, f"non-numeric feature ({exc})") from None
                if not np.all(np.isfinite(x)):
                    raise MalformedRowError(row, "non-finite feature value")
                yield Example(x, self._label(row, cells[self._label_idx].strip()), row)


def open_csv_stream(path, schema: CsvSchema) -> CsvStream:
    return CsvStream(path, schema)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# Synthetic piecewise-stationary streams
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=float))
        if self.mean.shape != self.var.shape or self.mean.ndim != 1:
            raise ValueError("component mean and var must be 1-D of equal length")
        if np.any(self.var <= 0) or self.weight <= 0:
            raise ValueError("component variances and weight must be positive")


@dataclass(frozen=True)
class MixtureGenerator:
    """Joint distribution over (x, y): y ~ priors, x | y ~ mixture of diagonal Gaussians."""

    priors: np.ndarray
    classes: tuple[tuple[GaussianComponent, ...], ...]
    _packed: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        priors = np.asarray(self.priors, dtype=float)
        object.__setattr__(self, "priors", priors)
        classes = tuple(tuple(c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        if len(classes) != priors.shape[0] or len(classes) < 1:
            raise ValueError("need one component list per class prior")
        if np.any(priors < 0) or not math.isclose(priors.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("class priors must be nonnegative and sum to 1")
        dims = {comp.mean.shape[0] for comps in classes for comp in comps}
        if len(dims) != 1 or any(len(comps) == 0 for comps in classes):
            raise ValueError("every class needs components of one common dimension")
        packed = []
        for comps in classes:
            w = np.array([c.weight for c in comps])
            w = w / w.sum()
            means = np.stack([c.mean for c in comps])
            var = np.stack([c.var for c in comps])
            const = np.log(w) - 0.5 * (np.log(var).sum(axis=1) + means.shape[1] * _LOG_2PI)
            packed.append((w, means, var, const))
        object.__setattr__(self, "_packed", tuple(packed))

    @property
    def dim(self) -> int:
        return self.classes[0][0].mean.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_log_densities(self, x) -> np.ndarray:
        """log p(x | y=c) for every class; ``x`` may be (d,) or (n, d)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {X.shape[1]}")
        out = np.empty((X.shape[0], self.n_classes))
        for c, (_, means, var, const) in enumerate(self._packed):
            sq = ((X[:, None, :] - means[None]) ** 2 / var[None]).sum(axis=2)
            comp = const[None] - 0.5 * sq
            m = comp.max(axis=1, keepdims=True)
            out[:, c] = (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0]
        return out[0] if single else out

    def joint_log_density(self, X, y) -> np.ndarray:
        """log p(x, y) = log prior_y + log p(x | y), vectorised over rows."""
        with np.errstate(divide="ignore"):
            log_prior = np.log(self.priors)
        lcd = self.class_log_densities(np.atleast_2d(X))
        y = np.asarray(y, dtype=int)
        return log_prior[y] + lcd[np.arange(len(y)), y]

    def posterior(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            a = np.log(self.priors) + self.class_log_densities(x)
        a = a - a.max(axis=-1, keepdims=True)
        p = np.exp(a)
        return p / p.sum(axis=-1, keepdims=True)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        y = rng.choice(self.n_classes, size=n, p=self.priors)
        X = np.empty((n, self.dim))
        for c, (w, means, var, _) in enumerate(self._packed):
            idx = np.flatnonzero(y == c)
            if idx.size == 0:
                continue
            k = rng.choice(len(w), size=idx.size, p=w)
            X[idx] = means[k] + rng.standard_normal((idx.size, self.dim)) * np.sqrt(var[k])
        return X, y


@dataclass(frozen=True)
class RegimeSpec:
    length: int
    generator: MixtureGenerator
    id: str

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("regime length must be positive")


def _check_regimes(regimes: Sequence[RegimeSpec]) -> None:
    if not regimes:
        raise ValueError("need at least one regime")
    d, c = regimes[0].generator.dim, regimes[0].generator.n_classes
    for r in regimes[1:]:
        if r.generator.dim != d or r.generator.n_classes != c:
            raise ValueError(
                f"regime {r.id!r} has (d={r.generator.dim}, C={r.generator.n_classes}), "
                f"expected (d={d}, C={c})"
            )


def regime_schedule(regimes: Sequence[RegimeSpec]) -> np.ndarray:
    """Index into ``regimes`` of the segment active at every step."""
    return np.repeat(np.arange(len(regimes)), [r.length for r in regimes])


def gen_piecewise_stream(regimes: Sequence[RegimeSpec], seed: int) -> Iterator[Example]:
    """Concatenate i.i.d. draws from each regime in order.  Deterministic in ``seed``."""
    _check_regimes(regimes)
    rng = np.random.default_rng(seed)
    step = 0
    for r in regimes:
        X, y = r.generator.sample(rng, r.length)
        for i in range(r.length):
            yield Example(X[i], int(y[i]), step)
            step += 1


def bayes_predict(regime: RegimeSpec | MixtureGenerator, x) -> int:
    """argmax_c prior_c * p(x | c), lowest class index on ties."""
    gen = regime.generator if isinstance(regime, RegimeSpec) else regime
    x = np.asarray(x, dtype=float)
    if x.shape != (gen.dim,):
        raise ValueError(f"expected feature vector of shape ({gen.dim},), got {x.shape}")
    with np.errstate(divide="ignore"):
        score = np.log(gen.priors) + gen.class_log_densities(x)
    return int(np.argmax(score))


def tv_distance(p: MixtureGenerator, q: MixtureGenerator, n_samples: int, seed: int = 0) -> float:
    """Monte Carlo total variation between two joint (x, y) distributions.

    Samples come from the even mixture m = (p + q) / 2, and
    TV = 0.5 E_m[|p - q| / m] = E_m[|tanh((log p - log q) / 2)|].
    """
    if n_samples <= 0:
        raise ValueError("sample count must be positive")
    if p.dim != q.dim or p.n_classes != q.n_classes:
        raise ValueError("distributions live on different spaces")
    rng = np.random.default_rng(seed)
    n_p = rng.binomial(n_samples, 0.5)
    Xp, yp = p.sample(rng, n_p)
    Xq, yq = q.sample(rng, n_samples - n_p)
    X = np.concatenate([Xp, Xq])
    y = np.concatenate([yp, yq])
    lp = p.joint_log_density(X, y)
    lq = q.joint_log_density(X, y)
    with np.errstate(invalid="ignore"):
        diff = lp - lq
    # both -inf (zero prior on both sides) cannot be sampled; one-sided -inf gives |tanh| = 1
    r = np.where(np.isnan(diff), 0.0, np.abs(np.tanh(diff / 2.0)))
    return float(r.mean())


def drift_budget(regimes: Sequence[RegimeSpec], samples_per_estimate: int, seed: int = 0) -> float:
    """Cumulative drift: sum of TV distances across segment boundaries.

    Within a segment the per-step term is zero.  Each boundary estimate uses
    a fresh generator seeded with ``seed``, so a given pair of regimes always
    contributes the same amount wherever it appears.
    """
    if samples_per_estimate <= 0:
        raise ValueError("sample count must be positive")
    _check_regimes(regimes)
    total = 0.0
    for prev, cur in zip(regimes[:-1], regimes[1:]):
        if prev.generator is cur.generator:
            continue
        total += tv_distance(prev.generator, cur.generator, samples_per_estimate, seed)
    return total


# --------------------------------------------------------------------------
# Declarative stream specs (TOML)
# --------------------------------------------------------------------------


def _component(obj) -> GaussianComponent:
    return GaussianComponent(float(obj.get("weight", 1.0)), obj["mean"], obj["var"])


def parse_stream_spec(data: dict) -> tuple[list[RegimeSpec], int | None]:
    """Build regimes from a parsed spec document.

    Grammar (TOML)::

        seed = 7                       # optional default seed
        [regimes.A]
        priors = [0.5, 0.5]
        classes = [                    # one entry per class
          {mean = [-2.0, 0.0], var = [1.0, 1.0]},          # single Gaussian
          [{weight = 0.5, mean = [2.0, 0.0], var = [1.0, 1.0]},
           {weight = 0.5, mean = [2.0, 4.0], var = [0.5, 0.5]}],   # mixture
        ]
        [[segments]]
        regime = "A"
        length = 500

    Segments that name the same regime share one generator object.
    """
    try:
        regime_defs = data["regimes"]
        segments = data["segments"]
    except KeyError as exc:
        raise StreamError(f"stream spec missing section {exc}") from None
    gens: dict[str, MixtureGenerator] = {}
    for name, spec in regime_defs.items():
        try:
            classes = []
            for entry in spec["classes"]:
                comps = entry if isinstance(entry, list) else [entry]
                classes.append(tuple(_component(c) for c in comps))
            n_cls = len(classes)
            priors = spec.get("priors", [1.0 / n_cls] * n_cls)
            gens[name] = MixtureGenerator(np.asarray(priors, dtype=float), tuple(classes))
        except (KeyError, TypeError, ValueError) as exc:
            raise StreamError(f"regime {name!r}: {exc}") from None
    regimes = []
    for i, seg in enumerate(segments):
        try:
            name = seg["regime"]
            regimes.append(RegimeSpec(int(seg["length"]), gens[name], name))
        except KeyError as exc:
            raise StreamError(f"segment {i}: unknown or missing {exc}") from None
        except ValueError as exc:
            raise StreamError(f"segment {i}: {exc}") from None
    try:
        _check_regimes(regimes)
    except ValueError as exc:
        raise StreamError(str(exc)) from None
    seed = data.get("seed")
    return regimes, None if seed is None else int(seed)


def load_stream_spec(path) -> tuple[list[RegimeSpec], int | None]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such stream spec: {path}")
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise StreamError(f"{path}: {exc}") from None
    return parse_stream_spec(data)

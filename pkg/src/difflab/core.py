"""Foundational types: vocabulary, embeddings, data distributions, noise schedules.

Everything here is exactly evaluable: distributions are explicit tables,
schedules have closed-form (or interpolant-exact) derivatives, and all
types are immutable after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .rng import stream

JOINT_ENUMERATION_CAP = 65536
COLLAPSE_THRESHOLD = 1e-6


class CollapseError(ValueError):
    """Embedding rows too close: d_e is too small for V."""


@dataclass(frozen=True)
class Vocabulary:
    size: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        labels = self.labels or tuple(f"tok{i}" for i in range(self.size))
        if len(labels) != self.size or len(set(labels)) != self.size:
            raise ValueError("labels must be distinct, one per token")
        object.__setattr__(self, "labels", tuple(labels))


@dataclass(frozen=True)
class EmbeddingTable:
    """Unit-norm token embeddings, one row per token."""

    matrix: np.ndarray  # (V, d_e)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] < 2:
            raise ValueError("embedding matrix must be (V>=2, d_e)")
        norms = np.linalg.norm(m, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("embedding rows must have unit norm")
        if min_pairwise_distance(m) <= COLLAPSE_THRESHOLD:
            raise CollapseError("embedding rows collapse (pairwise distance too small)")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def embed(self, tokens: np.ndarray) -> np.ndarray:
        """Map token ids (..., L) to embeddings (..., L, d_e)."""
        return self.matrix[np.asarray(tokens)]


def min_pairwise_distance(m: np.ndarray) -> float:
    diff = m[:, None, :] - m[None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def make_embedding_table(V: int, d_e: int, seed: int, max_retries: int = 8) -> EmbeddingTable:
    """Random unit-norm embeddings; retries with perturbed seed on collapse."""
    if V < 2 or d_e < 1:
        raise ValueError("need V >= 2 and d_e >= 1")
    for attempt in range(max_retries):
        rng = stream(seed, "embedding-init", attempt)
        m = rng.standard_normal((V, d_e))
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        # a zero row would make normalization undefined; resample handles it
        if np.any(norms == 0):
            continue
        m /= norms
        if min_pairwise_distance(m) > COLLAPSE_THRESHOLD:
            return EmbeddingTable(m)
    raise CollapseError(f"could not place {V} distinct unit vectors in {d_e} dims")


# ---------------------------------------------------------------------------
# Data distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataDistribution:
    """Exact categorical distribution over length-L sequences.

    kind "joint": `table` is a probability vector over all V**L sequences,
    indexed lexicographically (position 0 most significant).
    kind "factorized": `table` is an (L, V) array of per-position marginals.
    """

    kind: str
    V: int
    L: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if self.kind == "joint":
            n_states = self.V**self.L
            if n_states > JOINT_ENUMERATION_CAP:
                raise ValueError(f"joint enumeration cap exceeded: {n_states}")
            if t.shape != (n_states,):
                raise ValueError("joint table must have V**L entries")
            if not np.isclose(t.sum(), 1.0, atol=1e-12):
                raise ValueError("joint table must sum to 1")
        elif self.kind == "factorized":
            if t.shape != (self.L, self.V):
                raise ValueError("factorized table must be (L, V)")
            if not np.allclose(t.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError("each factor must sum to 1")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")
        if np.any(t < 0):
            raise ValueError("probabilities must be nonnegative")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    # -- enumeration helpers ------------------------------------------------

    def all_sequences(self) -> np.ndarray:
        """All V**L sequences, shape (V**L, L), lexicographic order."""
        n = self.V**self.L
        if n > JOINT_ENUMERATION_CAP:
            raise ValueError("enumeration cap exceeded")
        idx = np.arange(n)
        seqs = np.empty((n, self.L), dtype=np.int64)
        for pos in range(self.L - 1, -1, -1):
            seqs[:, pos] = idx % self.V
            idx //= self.V
        return seqs

    def joint_table(self) -> np.ndarray:
        """Probability vector over all V**L sequences (expands factorized)."""
        if self.kind == "joint":
            return self.table
        seqs = self.all_sequences()
        p = np.ones(len(seqs))
        for pos in range(self.L):
            p *= self.table[pos, seqs[:, pos]]
        return p

    def marginals(self) -> np.ndarray:
        """Per-position marginals, shape (L, V)."""
        if self.kind == "factorized":
            return self.table
        seqs = self.all_sequences()
        out = np.zeros((self.L, self.V))
        for pos in range(self.L):
            np.add.at(out[pos], seqs[:, pos], self.table)
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n sequences, shape (n, L)."""
        if self.kind == "factorized":
            out = np.empty((n, self.L), dtype=np.int64)
            for pos in range(self.L):
                out[:, pos] = rng.choice(self.V, size=n, p=self.table[pos])
            return out
        idx = rng.choice(len(self.table), size=n, p=self.table)
        return self.all_sequences()[idx]

    def log_prob(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.atleast_2d(tokens)
        if self.kind == "factorized":
            lp = np.zeros(len(tokens))
            for pos in range(self.L):
                lp += np.log(self.table[pos, tokens[:, pos]])
            return lp
        idx = sequences_to_index(tokens, self.V)
        return np.log(self.table[idx])


def sequences_to_index(tokens: np.ndarray, V: int) -> np.ndarray:
    tokens = np.asarray(tokens)
    idx = np.zeros(tokens.shape[:-1], dtype=np.int64)
    for pos in range(tokens.shape[-1]):
        idx = idx * V + tokens[..., pos]
    return idx


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def data_entropy(d: DataDistribution) -> float:
    """Sequence entropy H(x) in nats (0 log 0 := 0)."""
    if d.kind == "factorized":
        return sum(_entropy(d.table[pos]) for pos in range(d.L))
    return _entropy(d.table)


def total_correlation(d: DataDistribution) -> float:
    """Total correlation sum_l H(x^l) - H(x) >= 0; zero iff independent."""
    if d.kind == "factorized":
        return 0.0
    marg = d.marginals()
    return sum(_entropy(marg[pos]) for pos in range(d.L)) - data_entropy(d)


# ---------------------------------------------------------------------------
# Noise schedules
# ---------------------------------------------------------------------------


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


class LinearShape:
    """Identity interior shape: gtilde(t) = t."""

    kind = "linear"

    def value(self, t):
        return np.asarray(t, dtype=np.float64)

    def derivative(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))

    def inverse(self, u):
        return np.asarray(u, dtype=np.float64)

    def to_dict(self):
        return {"kind": "linear"}


class MonotoneParametricShape:
    """Piecewise-linear monotone shape with K learnable knot increments.

    Increments are softplus(params) normalized to sum to one, so the shape
    hits 0 at t=0 and 1 at t=1 with strictly positive slopes everywhere.
    """

    kind = "parametric"

    def __init__(self, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 1 or len(params) < 1:
            raise ValueError("params must be a 1-D vector of knot increments")
        self.params = params.copy()
        raw = softplus(params)
        self._inc = raw / raw.sum()
        self._knots_t = np.linspace(0.0, 1.0, len(params) + 1)
        self._knots_g = np.concatenate([[0.0], np.cumsum(self._inc)])
        self._knots_g[-1] = 1.0
        self._slopes = self._inc * len(params)

    @property
    def n_params(self) -> int:
        return len(self.params)

    def _segment(self, t):
        k = np.clip((np.asarray(t) * len(self.params)).astype(int), 0, len(self.params) - 1)
        return k

    def value(self, t):
        t = np.asarray(t, dtype=np.float64)
        k = self._segment(t)
        return self._knots_g[k] + self._slopes[k] * (t - self._knots_t[k])

    def derivative(self, t):
        return self._slopes[self._segment(t)]

    def inverse(self, u):
        u = np.asarray(u, dtype=np.float64)
        k = np.clip(np.searchsorted(self._knots_g, u, side="right") - 1, 0, len(self.params) - 1)
        return self._knots_t[k] + (u - self._knots_g[k]) / self._slopes[k]

    def with_params(self, params: np.ndarray) -> "MonotoneParametricShape":
        return MonotoneParametricShape(params)

    def to_dict(self):
        return {"kind": "parametric", "params": self.params.tolist()}


class TabulatedShape:
    """Monotone-cubic interpolant through (t, gtilde) pairs.

    Used for the closed-form optimal schedule, where the shape is known on a
    grid; derivatives come from the interpolant itself, not finite
    differences.
    """

    kind = "tabulated"

    def __init__(self, t_grid: np.ndarray, g_grid: np.ndarray):
        t_grid = np.asarray(t_grid, dtype=np.float64)
        g_grid = np.asarray(g_grid, dtype=np.float64)
        if t_grid.ndim != 1 or t_grid.shape != g_grid.shape or len(t_grid) < 4:
            raise ValueError("need matching 1-D grids with at least 4 points")
        if not (np.all(np.diff(t_grid) > 0) and np.all(np.diff(g_grid) > 0)):
            raise ValueError("grids must be strictly increasing")
        if not (np.isclose(t_grid[0], 0) and np.isclose(t_grid[-1], 1)
                and np.isclose(g_grid[0], 0) and np.isclose(g_grid[-1], 1)):
            raise ValueError("shape must map [0,1] onto [0,1]")
        self.t_grid = t_grid
        self.g_grid = g_grid
        self._interp = PchipInterpolator(t_grid, g_grid)
        self._deriv = self._interp.derivative()
        self._inv = PchipInterpolator(g_grid, t_grid)

    def value(self, t):
        return np.clip(self._interp(t), 0.0, 1.0)

    def derivative(self, t):
        return self._deriv(t)

    def inverse(self, u):
        return np.clip(self._inv(u), 0.0, 1.0)

    def to_dict(self):
        return {"kind": "tabulated", "t_grid": self.t_grid.tolist(),
                "g_grid": self.g_grid.tolist()}


def shape_from_dict(d: dict):
    kind = d["kind"]
    if kind == "linear":
        return LinearShape()
    if kind == "parametric":
        return MonotoneParametricShape(np.asarray(d["params"]))
    if kind == "tabulated":
        return TabulatedShape(np.asarray(d["t_grid"]), np.asarray(d["g_grid"]))
    raise ValueError(f"unknown shape kind {kind!r}")


@dataclass(frozen=True)
class ScheduleEval:
    gamma: np.ndarray
    gamma_prime: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    snr: np.ndarray
    snr_prime: np.ndarray


class NoiseSchedule:
    """gamma(t) = gamma0 + (gamma1 - gamma0) * gtilde(t) with monotone gtilde."""

    def __init__(self, gamma0: float, gamma1: float, shape=None):
        if not gamma0 < gamma1:
            raise ValueError("need gamma0 < gamma1")
        self.gamma0 = float(gamma0)
        self.gamma1 = float(gamma1)
        self.shape = shape if shape is not None else LinearShape()

    def gamma(self, t):
        return self.gamma0 + (self.gamma1 - self.gamma0) * self.shape.value(t)

    def gamma_prime(self, t):
        return (self.gamma1 - self.gamma0) * self.shape.derivative(t)

    def t_of_gamma(self, gamma):
        u = (np.asarray(gamma, dtype=np.float64) - self.gamma0) / (self.gamma1 - self.gamma0)
        return self.shape.inverse(u)

    def alpha_sigma(self, t):
        g = self.gamma(t)
        return np.sqrt(sigmoid(-g)), np.sqrt(sigmoid(g))

    def to_dict(self):
        return {"gamma0": self.gamma0, "gamma1": self.gamma1,
                "shape": self.shape.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(d["gamma0"], d["gamma1"], shape_from_dict(d["shape"]))


def schedule_eval(s: NoiseSchedule, t) -> ScheduleEval:
    """Evaluate gamma, gamma', alpha, sigma, SNR, SNR' at t in [0, 1]."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0, 1]")
    g = s.gamma(t)
    gp = s.gamma_prime(t)
    snr = np.exp(-g)
    return ScheduleEval(gamma=g, gamma_prime=gp,
                        alpha=np.sqrt(sigmoid(-g)), sigma=np.sqrt(sigmoid(g)),
                        snr=snr, snr_prime=-gp * snr)


def alpha_sigma_of_gamma(gamma):
    """Variance-preserving coefficients as functions of gamma alone."""
    gamma = np.asarray(gamma, dtype=np.float64)
    return np.sqrt(sigmoid(-gamma)), np.sqrt(sigmoid(gamma))


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    """A complete desk-scale problem: vocabulary, embeddings, data, schedule."""

    vocab: Vocabulary
    embedding: EmbeddingTable
    data: DataDistribution
    schedule: NoiseSchedule
    seed: int = 0

    @property
    def V(self) -> int:
        return self.vocab.size

    @property
    def L(self) -> int:
        return self.data.L

    @property
    def d_e(self) -> int:
        return self.embedding.dim

    def embed(self, tokens: np.ndarray) -> np.ndarray:
        return self.embedding.embed(tokens)

    def to_dict(self) -> dict:
        return {
            "V": self.V,
            "L": self.L,
            "d_e": self.d_e,
            "labels": list(self.vocab.labels),
            "embedding": self.embedding.matrix.tolist(),
            "data": {"kind": self.data.kind, "table": self.data.table.tolist()},
            "schedule": self.schedule.to_dict(),
            "seed": self.seed,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        vocab = Vocabulary(d["V"], tuple(d["labels"]))
        emb = EmbeddingTable(np.asarray(d["embedding"]))
        data = DataDistribution(d["data"]["kind"], d["V"], d["L"],
                                np.asarray(d["data"]["table"]))
        sched = NoiseSchedule.from_dict(d["schedule"])
        return cls(vocab, emb, data, sched, int(d["seed"]))

    @classmethod
    def load(cls, path) -> "Instance":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _random_joint_table(V: int, L: int, rng: np.random.Generator,
                        concentration: float = 0.5) -> np.ndarray:
    p = rng.gamma(concentration, size=V**L)
    return p / p.sum()


def make_instance(V: int = 6, L: int = 3, d_e: int = 4, seed: int = 0,
                  kind: str = "joint", gamma0: float = -6.0,
                  gamma1: float = 6.0) -> Instance:
    """Build a reproducible instance with a random data distribution.

    Joint tables are Dirichlet-like draws with enough spread to give
    nonzero total correlation; factorized instances reuse one non-uniform
    marginal at every position.
    """
    vocab = Vocabulary(V)
    emb = make_embedding_table(V, d_e, seed)
    rng = stream(seed, "data-table")
    if kind == "joint":
        table = _random_joint_table(V, L, rng)
        data = DataDistribution("joint", V, L, table)
    elif kind == "factorized":
        p = rng.gamma(2.0, size=V)
        p /= p.sum()
        data = DataDistribution("factorized", V, L, np.tile(p, (L, 1)))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    sched = NoiseSchedule(gamma0, gamma1, LinearShape())
    return Instance(vocab, emb, data, sched, seed)


def tiny_instance(seed: int = 0, gamma0: float = -6.0, gamma1: float = 6.0,
                  p0: float = 0.5) -> Instance:
    """V=2, L=1, d_e=1 instance with embeddings +1/-1; exactly quadrable."""
    vocab = Vocabulary(2)
    emb = EmbeddingTable(np.array([[1.0], [-1.0]]))
    data = DataDistribution("joint", 2, 1, np.array([p0, 1.0 - p0]))
    sched = NoiseSchedule(gamma0, gamma1, LinearShape())
    return Instance(vocab, emb, data, sched, seed)

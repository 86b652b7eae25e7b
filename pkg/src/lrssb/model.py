"""Problem types and the synthetic data generator for max-selected linear models.

Observations follow ``z = max_j (x @ w_j + eta_j)`` with ``x ~ N(0, I_n)``.
The max-linear model (one noise term added outside the max) is the special
case ``eta = xi * ones(k)``, selected with the ``shared_scalar`` noise kind.

Indices are 0-based throughout: regressor ``i`` is row ``i`` of
``RegressorSet.vectors``.
"""

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special

from ._parallel import DEFAULT_BLOCK, block_rngs, block_slices, map_ordered

NOISE_KINDS = (
    "independent_gaussian",
    "independent_uniform",
    "independent_scaled_rademacher",
    "shared_scalar",
)
SHARED_LAWS = ("gaussian", "uniform", "scaled_rademacher")

# Orlicz psi_2 norm of each unit-scale law: E exp(X^2 / K^2) = 2.
# N(0, 1): (1 - 2/K^2)^(-1/2) = 2  =>  K^2 = 8/3.
GAUSSIAN_PSI2 = math.sqrt(8.0 / 3.0)
# +-1: exp(1/K^2) = 2  =>  K = 1/sqrt(log 2).
RADEMACHER_PSI2 = 1.0 / math.sqrt(math.log(2.0))


def _uniform_psi2():
    # U[-1, 1]: int_0^1 exp(u^2/K^2) du = K (sqrt(pi)/2) erfi(1/K) = 2.
    f = lambda K: K * math.sqrt(math.pi) / 2.0 * special.erfi(1.0 / K) - 2.0
    return optimize.brentq(f, 0.3, 5.0, xtol=1e-15)


UNIFORM_PSI2 = _uniform_psi2()


class StructuralError(ValueError):
    """Inputs with inconsistent shapes or out-of-domain parameters."""


class RegimeWarning(UserWarning):
    """Parameters fall outside the regime where the recovery guarantee applies."""


@dataclass(frozen=True)
class ProblemParams:
    n: int
    k: int
    delta: float
    bound_b: float
    epsilon: float
    lam: float = 0.01

    def __post_init__(self):
        if self.k < 1 or self.n < self.k:
            raise StructuralError(f"need 1 <= k <= n, got n={self.n}, k={self.k}")
        if not 0 < self.delta <= self.bound_b:
            raise StructuralError(f"need 0 < delta <= B, got delta={self.delta}, B={self.bound_b}")
        if self.bound_b < 1:
            raise StructuralError(f"need B >= 1, got {self.bound_b}")
        if self.epsilon <= 0:
            raise StructuralError("epsilon must be positive")
        if not 0 < self.lam < 1:
            raise StructuralError("failure probability must lie in (0, 1)")
        for msg in self.regime_warnings():
            warnings.warn(msg, RegimeWarning, stacklevel=3)

    def regime_warnings(self, c=1.0):
        """Messages for accuracy targets outside the regime the guarantees cover."""
        out = []
        d, b, e = self.delta, self.bound_b, self.epsilon
        if e >= d**2 / (10 * b**2):
            out.append(f"epsilon={e:g} >= Delta^2/(10 B^2)={d**2 / (10 * b**2):g}: separation regime violated")
        if e >= c * d**4 / b**4:
            out.append(f"epsilon={e:g} >= c Delta^4/B^4={c * d**4 / b**4:g} (c={c:g})")
        return out


@dataclass(frozen=True)
class Violation:
    kind: str
    indices: tuple
    slack: float
    message: str


@dataclass(frozen=True, eq=False)
class RegressorSet:
    vectors: np.ndarray
    delta: float
    bound_b: float

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=float)
        if vecs.ndim != 2 or vecs.shape[0] < 1:
            raise StructuralError(f"regressors must be a non-empty (k, n) array, got shape {vecs.shape}")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    @property
    def k(self):
        return self.vectors.shape[0]

    @property
    def n(self):
        return self.vectors.shape[1]


def validate_regressors(ws):
    """Check norms in [delta, B], Delta-uncoveredness, and the implied pairwise separation.

    Returns a list of ``Violation``; empty means the set satisfies both assumptions.
    """
    if isinstance(ws, RegressorSet):
        vecs, delta, b = ws.vectors, ws.delta, ws.bound_b
    else:
        raise StructuralError("expected a RegressorSet")
    k = vecs.shape[0]
    out = []
    norms = np.linalg.norm(vecs, axis=1)
    gram = vecs @ vecs.T
    tol = 1e-12 * max(1.0, b * b)
    for i in range(k):
        if norms[i] < delta - tol:
            out.append(Violation("norm_below_delta", (i,), norms[i] - delta,
                                 f"||w_{i}|| = {norms[i]:.6g} < Delta = {delta:g}"))
        if norms[i] > b + tol:
            out.append(Violation("norm_above_b", (i,), b - norms[i],
                                 f"||w_{i}|| = {norms[i]:.6g} > B = {b:g}"))
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            slack = norms[i] ** 2 - delta**2 - abs(gram[i, j])
            if slack < -tol:
                out.append(Violation("covered", (i, j), slack,
                                      f"|<w_{j}, w_{i}>| = {abs(gram[i, j]):.6g} > ||w_{i}||^2 - Delta^2 = "
                                      f"{norms[i] ** 2 - delta**2:.6g}"))
    for i in range(k):
        for j in range(i + 1, k):
            dist = np.linalg.norm(vecs[i] - vecs[j])
            slack = dist - delta**2 / b
            if slack < -tol:
                out.append(Violation("separation", (i, j), slack,
                                     f"||w_{i} - w_{j}|| = {dist:.6g} < Delta^2/B = {delta**2 / b:.6g}"))
    return out


@dataclass(frozen=True)
class NoiseSpec:
    """Centered, symmetric, marginally subgaussian noise on R^k.

    ``scales`` holds one parameter per coordinate: the standard deviation for
    Gaussian, the half-width for uniform, the magnitude for scaled Rademacher.
    For ``shared_scalar`` it holds a single scale and ``law`` names the law of
    the shared draw.
    """

    kind: str
    k: int
    scales: tuple
    law: str = None
    bound_b: float = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise StructuralError(f"unknown noise kind {self.kind!r}")
        scales = tuple(float(s) for s in np.atleast_1d(self.scales))
        object.__setattr__(self, "scales", scales)
        if self.kind == "shared_scalar":
            if self.law not in SHARED_LAWS:
                raise StructuralError(f"shared_scalar needs law in {SHARED_LAWS}, got {self.law!r}")
            if len(scales) != 1:
                raise StructuralError("shared_scalar takes exactly one scale")
        elif len(scales) != self.k:
            raise StructuralError(f"expected {self.k} scales, got {len(scales)}")
        if any(s < 0 for s in scales):
            raise StructuralError("noise scales must be nonnegative")
        if self.bound_b is not None:
            bad = self.check_subgaussian(self.bound_b)
            if bad:
                raise StructuralError("; ".join(bad))

    @classmethod
    def gaussian(cls, sigma, k, bound_b=None):
        return cls("independent_gaussian", k, np.broadcast_to(sigma, (k,)), bound_b=bound_b)

    @classmethod
    def uniform(cls, half_width, k, bound_b=None):
        return cls("independent_uniform", k, np.broadcast_to(half_width, (k,)), bound_b=bound_b)

    @classmethod
    def rademacher(cls, scale, k, bound_b=None):
        return cls("independent_scaled_rademacher", k, np.broadcast_to(scale, (k,)), bound_b=bound_b)

    @classmethod
    def shared(cls, law, scale, k, bound_b=None):
        return cls("shared_scalar", k, (scale,), law=law, bound_b=bound_b)

    @classmethod
    def zero(cls, k):
        return cls.gaussian(0.0, k)

    @property
    def marginal_law(self):
        if self.kind == "shared_scalar":
            return self.law
        return {"independent_gaussian": "gaussian", "independent_uniform": "uniform",
                "independent_scaled_rademacher": "scaled_rademacher"}[self.kind]

    def _per_coordinate(self):
        return np.full(self.k, self.scales[0]) if self.kind == "shared_scalar" else np.array(self.scales)

    def variances(self):
        s = self._per_coordinate()
        factor = {"gaussian": 1.0, "uniform": 1.0 / 3.0, "scaled_rademacher": 1.0}[self.marginal_law]
        return factor * s**2

    def positive_second_moments(self):
        """E[(eta_j)_+^2]; all supported laws are symmetric, so this is half the variance."""
        return self.variances() / 2.0

    def psi2_norms(self):
        unit = {"gaussian": GAUSSIAN_PSI2, "uniform": UNIFORM_PSI2,
                "scaled_rademacher": RADEMACHER_PSI2}[self.marginal_law]
        return unit * self._per_coordinate()

    def check_subgaussian(self, bound_b):
        norms = self.psi2_norms()
        return [f"coordinate {j}: psi_2 norm {norms[j]:.6g} exceeds B = {bound_b:g}"
                for j in range(self.k) if norms[j] > bound_b]

    def sample(self, rng, m):
        law = self.marginal_law
        cols = 1 if self.kind == "shared_scalar" else self.k
        scales = np.array(self.scales)
        if law == "gaussian":
            draw = rng.standard_normal((m, cols))
        elif law == "uniform":
            draw = rng.uniform(-1.0, 1.0, (m, cols))
        else:
            draw = rng.integers(0, 2, (m, cols)) * 2.0 - 1.0
        draw = draw * scales
        if self.kind == "shared_scalar":
            draw = np.repeat(draw, self.k, axis=1)
        return draw

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "scales": list(self.scales), "law": self.law}

    @classmethod
    def from_dict(cls, d, bound_b=None):
        return cls(d["kind"], int(d["k"]), tuple(d["scales"]), law=d.get("law"), bound_b=bound_b)


@dataclass(frozen=True, eq=False)
class HiddenTruth:
    """Per-sample maximizing index and noise draw. Diagnostics only."""

    index: np.ndarray
    noise: np.ndarray


@dataclass(frozen=True, eq=False)
class SampleBatch:
    xs: np.ndarray
    zs: np.ndarray
    seed: int = 0
    k: int = 0
    noise_kind: str = ""
    hidden: HiddenTruth = field(default=None, repr=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        zs = np.asarray(self.zs, dtype=float)
        if xs.ndim != 2 or zs.ndim != 1 or xs.shape[0] != zs.shape[0]:
            raise StructuralError(f"xs must be (m, n) and zs (m,), got {xs.shape} and {zs.shape}")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)

    @property
    def m(self):
        return self.xs.shape[0]

    @property
    def n(self):
        return self.xs.shape[1]

    def observed(self):
        """Copy without the hidden channel; the only view handed to estimators."""
        return SampleBatch(self.xs, self.zs, self.seed, self.k, self.noise_kind, None)

    def head(self, count):
        hidden = None
        if self.hidden is not None:
            hidden = HiddenTruth(self.hidden.index[:count], self.hidden.noise[:count])
        return SampleBatch(self.xs[:count], self.zs[:count], self.seed, self.k, self.noise_kind, hidden)

    def tail(self, start):
        hidden = None
        if self.hidden is not None:
            hidden = HiddenTruth(self.hidden.index[start:], self.hidden.noise[start:])
        return SampleBatch(self.xs[start:], self.zs[start:], self.seed, self.k, self.noise_kind, hidden)


def observe(xs, vectors, etas):
    """Deterministic core of the model: returns ``(z, argmax index)``; ties go to the lowest index."""
    vals = np.asarray(xs, dtype=float) @ np.asarray(vectors, dtype=float).T + np.asarray(etas, dtype=float)
    idx = np.argmax(vals, axis=1)
    return vals[np.arange(vals.shape[0]), idx], idx


def _draw_block(ws, noise, rng, size):
    xs = rng.standard_normal((size, ws.n))
    etas = noise.sample(rng, size)
    zs, idx = observe(xs, ws.vectors, etas)
    return xs, zs, idx, etas


def _check_generate(ws, noise, m):
    if m < 1:
        raise StructuralError("m must be >= 1")
    if noise.k != ws.k:
        raise StructuralError(f"noise dimension {noise.k} does not match k={ws.k}")


def generate(ws, noise, m, seed, n_threads=None, block_size=DEFAULT_BLOCK):
    """Draw ``m`` i.i.d. samples. Blocks get spawned seeds, so output is independent of thread count."""
    _check_generate(ws, noise, m)
    slices = block_slices(m, block_size)
    rngs = block_rngs(seed, len(slices))
    parts = map_ordered(lambda a: _draw_block(ws, noise, a[1], a[0].stop - a[0].start),
                        zip(slices, rngs), n_threads)
    xs = np.concatenate([p[0] for p in parts])
    zs = np.concatenate([p[1] for p in parts])
    idx = np.concatenate([p[2] for p in parts])
    etas = np.concatenate([p[3] for p in parts])
    return SampleBatch(xs, zs, int(seed), ws.k, noise.kind, HiddenTruth(idx, etas))


def observation_frequency(batch, i, require_nonnegative=False):
    """Fraction of samples whose hidden maximizer is ``i`` (optionally also with ``z >= 0``)."""
    if batch.hidden is None:
        raise StructuralError("observation frequency needs the hidden channel")
    hit = batch.hidden.index == i
    if require_nonnegative:
        hit &= batch.zs >= 0
    return float(np.mean(hit))


def empirical_observation_probability(ws, noise, m, seed, i, require_nonnegative=False, n_threads=None,
                                      block_size=DEFAULT_BLOCK):
    """Frequency with which regressor ``i`` attains the max, streamed block by block.

    Draws exactly the samples ``generate`` would for the same seed, without
    keeping them in memory.
    """
    _check_generate(ws, noise, m)
    slices = block_slices(m, block_size)
    rngs = block_rngs(seed, len(slices))

    def one_block(args):
        sl, rng = args
        _, zs, idx, _ = _draw_block(ws, noise, rng, sl.stop - sl.start)
        hit = idx == i
        if require_nonnegative:
            hit &= zs >= 0
        return int(np.count_nonzero(hit))

    return sum(map_ordered(one_block, zip(slices, rngs), n_threads)) / m


# ----------------------------------------------------------------------------
# named regressor families


def orthogonal_regressors(n, k, norm, delta, bound_b, basis=None):
    """``norm * e_i`` for i < k, or along the first k columns of ``basis``."""
    if basis is None:
        basis = np.eye(n)[:, :k]
    return RegressorSet(norm * np.asarray(basis)[:, :k].T, delta, bound_b)


def k_tight_regressors(k, bound_b, delta, n=None):
    """w_0 = (B/2 + 2 Delta^2/B) e_0 and w_j = (B/2)(e_0 + e_j) for j >= 1, no noise needed.

    Only Delta-uncovered when B >= 2 sqrt(2) Delta; for smaller B the inner
    products <w_0, w_j> = B^2/4 + Delta^2 exceed ||w_j||^2 - Delta^2.
    """
    n = k if n is None else n
    if n < k:
        raise StructuralError("need n >= k")
    vecs = np.zeros((k, n))
    vecs[0, 0] = bound_b / 2 + 2 * delta**2 / bound_b
    for j in range(1, k):
        vecs[j, 0] = bound_b / 2
        vecs[j, j] = bound_b / 2
    return RegressorSet(vecs, delta, bound_b)


def random_valid_regressors(n, k, delta, bound_b, rng, mixing=0.3, max_tries=1000):
    """Random Delta-uncovered set: perturbed orthonormal directions with norms in [1.1 Delta, B]."""
    lo = min(1.1 * delta, bound_b)
    for _ in range(max_tries):
        q, _ = np.linalg.qr(rng.standard_normal((n, k)))
        dirs = q.T + mixing * rng.standard_normal((k, n)) / math.sqrt(n)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        norms = rng.uniform(lo, bound_b, size=k)
        ws = RegressorSet(dirs * norms[:, None], delta, bound_b)
        if not validate_regressors(ws):
            return ws
    raise RuntimeError("could not draw a valid regressor set; lower mixing or delta")


# ----------------------------------------------------------------------------
# persistence


def _header(batch):
    return f"lrssb-batch v1 n={batch.n} k={batch.k} m={batch.m} seed={batch.seed} noise={batch.noise_kind}"


def _parse_header(line):
    fields = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
    return int(fields["n"]), int(fields["k"]), int(fields["m"]), int(fields["seed"]), fields["noise"]


def hidden_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".hidden" + path.suffix)


def save_batch(batch, path):
    """Write ``.csv`` (text, lossless 17 digits) or ``.npz``; the hidden channel goes to a sidecar."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, xs=batch.xs, zs=batch.zs, header=np.array(_header(batch)))
        if batch.hidden is not None:
            np.savez(hidden_path(path), index=batch.hidden.index, noise=batch.hidden.noise)
        return path
    cols = ",".join([f"x{j + 1}" for j in range(batch.n)] + ["z"])
    np.savetxt(path, np.column_stack([batch.xs, batch.zs]), delimiter=",", fmt="%.17g",
               header=_header(batch) + "\n" + cols, comments="# ")
    if batch.hidden is not None:
        cols = ",".join(["index"] + [f"eta{j + 1}" for j in range(batch.k)])
        np.savetxt(hidden_path(path), np.column_stack([batch.hidden.index, batch.hidden.noise]),
                   delimiter=",", fmt="%.17g", header=cols, comments="# ")
    return path


def load_batch(path, with_hidden=False):
    path = Path(path)
    if path.suffix == ".npz":
        data = np.load(path)
        n, k, m, seed, kind = _parse_header("# " + str(data["header"]))
        xs, zs = data["xs"], data["zs"]
        hidden = None
        if with_hidden and hidden_path(path).exists():
            h = np.load(hidden_path(path))
            hidden = HiddenTruth(h["index"], h["noise"])
        return SampleBatch(xs, zs, seed, k, kind, hidden)
    with open(path) as fh:
        first = fh.readline().strip()
    n, k, m, seed, kind = _parse_header(first)
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape != (m, n + 1):
        raise StructuralError(f"{path}: expected {(m, n + 1)} table, found {data.shape}")
    hidden = None
    if with_hidden and hidden_path(path).exists():
        h = np.loadtxt(hidden_path(path), delimiter=",", comments="#", ndmin=2)
        hidden = HiddenTruth(h[:, 0].astype(int), h[:, 1:])
    return SampleBatch(data[:, :n], data[:, n], seed, k, kind, hidden)


"""Diagonal Gaussians, block priors and the Gaussian network heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import MlpParams, init_mlp, mlp_apply

LOG_2PI = float(np.log(2.0 * np.pi))
LV_MIN = -13.8
LV_MAX = 2.0


@dataclass
class DiagGaussian:
    """Mean and log-variance, each of shape (..., d); entries may be taped."""

    mean: object
    logvar: object

    def __post_init__(self):
        if ad.value(self.mean).shape != ad.value(self.logvar).shape:
            raise ad.ShapeError(
                f"mean shape {ad.value(self.mean).shape} != logvar shape {ad.value(self.logvar).shape}"
            )

    @property
    def dim(self) -> int:
        return ad.value(self.mean).shape[-1]

    @property
    def stdev(self) -> np.ndarray:
        return np.exp(0.5 * ad.value(self.logvar))

    def numpy(self) -> "DiagGaussian":
        return DiagGaussian(np.array(ad.value(self.mean)), np.array(ad.value(self.logvar)))

    def row(self, i: int) -> "DiagGaussian":
        return DiagGaussian(ad.value(self.mean)[i], ad.value(self.logvar)[i])


def gaussian_log_density(x, g: DiagGaussian):
    """Sum over the last axis of log N(x; mean, exp(logvar))."""
    xs, ms = ad.value(x).shape, ad.value(g.mean).shape
    if xs[-1:] != ms[-1:]:
        raise ad.ShapeError(f"dimension mismatch: x {xs} vs mean {ms}")
    diff = ad.sub(x, g.mean)
    quad = ad.mul(ad.square(diff), ad.exp(ad.neg(g.logvar)))
    terms = ad.add(ad.add(quad, g.logvar), LOG_2PI)
    return ad.mul(ad.sum(terms, axis=-1), -0.5)


def bounded_logvar(raw, lv_min: float = LV_MIN, lv_max: float = LV_MAX):
    return ad.add(ad.mul(ad.sigmoid(raw), lv_max - lv_min), lv_min)


def sample_reparam(g: DiagGaussian, noise):
    noise_v = ad.value(noise)
    if noise_v.shape != ad.value(g.mean).shape:
        raise ad.ShapeError(f"noise shape {noise_v.shape} != mean shape {ad.value(g.mean).shape}")
    return ad.add(g.mean, ad.mul(ad.exp(ad.mul(g.logvar, 0.5)), noise))


# ------------------------------------------------------------------ priors

PRIOR_KINDS = ("normal", "uniform", "delta")


@dataclass
class PriorBlock:
    """One independent block: normal(mean, std), uniform(a, b) or delta(value)."""

    name: str
    kind: str
    size: int = 1
    params: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"prior block {self.name!r}: unknown kind {self.kind!r}")
        if self.size < 1:
            raise ValueError(f"prior block {self.name!r}: size must be >= 1")
        self.params = tuple(float(p) for p in self.params)
        if self.kind == "normal" and not (len(self.params) == 2 and self.params[1] > 0):
            raise ValueError(f"prior block {self.name!r}: normal needs (mean, std>0)")
        if self.kind == "uniform" and not (len(self.params) == 2 and self.params[0] < self.params[1]):
            raise ValueError(f"prior block {self.name!r}: uniform needs (a, b) with a < b")
        if self.kind == "delta" and len(self.params) != 1:
            raise ValueError(f"prior block {self.name!r}: delta needs (value,)")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(self.params[0], self.params[1], size=(n, self.size))
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], size=(n, self.size))
        return np.full((n, self.size), self.params[0])

    def log_density(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "normal":
            mu, sd = self.params
            return np.sum(-0.5 * ((x - mu) / sd) ** 2 - np.log(sd) - 0.5 * LOG_2PI, axis=-1)
        if self.kind == "uniform":
            a, b = self.params
            inside = np.all((x >= a) & (x <= b), axis=-1)
            return np.where(inside, -self.size * np.log(b - a), -np.inf)
        return np.zeros(x.shape[:-1])

    @property
    def mean(self) -> np.ndarray:
        if self.kind == "uniform":
            return np.full(self.size, 0.5 * (self.params[0] + self.params[1]))
        return np.full(self.size, self.params[0])

    @property
    def std(self) -> np.ndarray:
        if self.kind == "normal":
            return np.full(self.size, self.params[1])
        if self.kind == "uniform":
            return np.full(self.size, (self.params[1] - self.params[0]) / np.sqrt(12.0))
        return np.zeros(self.size)


@dataclass
class PriorSpec:
    blocks: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(np.sum([b.size for b in self.blocks])) if self.blocks else 0

    def slices(self) -> dict:
        out, start = {}, 0
        for b in self.blocks:
            out[b.name] = slice(start, start + b.size)
            start += b.size
        return out

    def block(self, name: str) -> PriorBlock:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def has(self, name: str) -> bool:
        return any(b.name == name for b in self.blocks)

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([b.mean for b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def std(self) -> np.ndarray:
        return np.concatenate([b.std for b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def layout(self) -> list:
        return [[b.name, b.kind, b.size] for b in self.blocks]


def prior_sample(p: PriorSpec, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """(n, dim) draws; blocks are sampled in declaration order."""
    if not p.blocks:
        return np.zeros((n, 0))
    return np.concatenate([b.sample(rng, n) for b in p.blocks], axis=1)


def prior_log_density(p: PriorSpec, x) -> np.ndarray:
    """Block-wise log density; ``-inf`` outside a uniform support.

    Delta blocks contribute 0 (densities are relative to the point mass).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != p.dim:
        raise ad.ShapeError(f"expected {p.dim} coordinates, got {x.shape[-1]}")
    total = np.zeros(x.shape[:-1])
    for b, sl in zip(p.blocks, p.slices().values()):
        total = total + b.log_density(x[..., sl])
    return total


# ------------------------------------------------------------------- heads

@dataclass
class NetworkHead:
    """An MLP emitting ``[mean | raw logvar]`` with fixed input/output affine maps.

    The input is standardised with ``(x - in_shift) / in_scale`` and the mean
    is de-standardised with ``out_shift + out_scale * mean``.
    """

    mlp: MlpParams
    out_dim: int
    lv_min: float = LV_MIN
    lv_max: float = LV_MAX
    in_shift: np.ndarray | None = None
    in_scale: np.ndarray | None = None
    out_shift: np.ndarray | None = None
    out_scale: np.ndarray | None = None

    def __post_init__(self):
        sizes = self.mlp.sizes
        if sizes[-1] != 2 * self.out_dim:
            raise ad.ShapeError(f"network emits {sizes[-1]} values, expected 2 x {self.out_dim}")
        d_in = sizes[0]
        self.in_shift = np.zeros(d_in) if self.in_shift is None else np.asarray(self.in_shift, dtype=float)
        self.in_scale = np.ones(d_in) if self.in_scale is None else np.asarray(self.in_scale, dtype=float)
        self.out_shift = np.zeros(self.out_dim) if self.out_shift is None else np.asarray(self.out_shift, dtype=float)
        self.out_scale = np.ones(self.out_dim) if self.out_scale is None else np.asarray(self.out_scale, dtype=float)
        if not self.lv_min < self.lv_max:
            raise ValueError("lv_min must be below lv_max")

    @property
    def in_dim(self) -> int:
        return self.mlp.sizes[0]

    def params(self) -> list:
        return self.mlp.flat()

    def with_params(self, flat) -> "NetworkHead":
        return NetworkHead(self.mlp.with_flat(flat), self.out_dim, self.lv_min, self.lv_max,
                           self.in_shift, self.in_scale, self.out_shift, self.out_scale)

    def __call__(self, x) -> DiagGaussian:
        return head_apply(self, x)


def make_head(in_dim: int, out_dim: int, hidden, rng: np.random.Generator, activation: str = "swish",
              lv_min: float = LV_MIN, lv_max: float = LV_MAX, last_scale: float = 0.1, **affine) -> NetworkHead:
    mlp = init_mlp([in_dim, *hidden, 2 * out_dim], rng, activation, last_scale=last_scale)
    return NetworkHead(mlp, out_dim, lv_min, lv_max, **affine)


def zero_head(in_dim: int, out_dim: int, hidden, activation: str = "swish", **kw) -> NetworkHead:
    sizes = [in_dim, *hidden, 2 * out_dim]
    layers = [(np.zeros((a, b)), np.zeros(b)) for a, b in zip(sizes[:-1], sizes[1:])]
    return NetworkHead(MlpParams(layers, activation), out_dim, **kw)


def head_apply(head: NetworkHead, x) -> DiagGaussian:
    shape = ad.value(x).shape
    if not shape or shape[-1] != head.in_dim:
        raise ad.ShapeError(f"head expects input width {head.in_dim}, got shape {shape}")
    h = ad.div(ad.sub(x, head.in_shift), head.in_scale)
    out = mlp_apply(head.mlp, h)
    d = head.out_dim
    mean = ad.add(ad.mul(out[..., :d], head.out_scale), head.out_shift)
    logvar = bounded_logvar(out[..., d:], head.lv_min, head.lv_max)
    return DiagGaussian(mean, logvar)


def as_rows(a):
    """View a vector as a single row; 2D inputs pass through (zero width allowed)."""
    v = ad.value(a)
    if v.ndim == 2:
        return a
    if v.ndim == 1:
        return ad.reshape(a, (1, v.shape[0]))
    raise ad.ShapeError(f"expected a vector or a matrix, got shape {v.shape}")


def _check_width(name, arr, expected):
    w = ad.value(arr).shape[-1] if ad.value(arr).ndim else 0
    if w != expected:
        raise ad.ShapeError(f"{name}: expected {expected} columns, got {w}")


def alpha_forward(head: NetworkHead, z, f, points=None) -> DiagGaussian:
    """q_alpha(u | z, f).

    Without ``points`` the head maps ``[z, f]`` to solution coefficients.  With
    ``points`` of shape (P, c) the head is pointwise: each row of ``[x, z, f]``
    gives the mean and log-variance of the field value at that point, and the
    result has shape (B, P).
    """
    zf = ad.concatenate([as_rows(z), as_rows(f)], axis=1)
    if points is None:
        _check_width("alpha", zf, head.in_dim)
        return head_apply(head, zf)
    b = ad.value(zf).shape[0]
    p = ad.value(points).shape[0]
    _check_width("alpha", np.zeros((1, ad.value(points).shape[1] + ad.value(zf).shape[1])), head.in_dim)
    rows = pointwise_inputs(points, zf)
    g = head_apply(head, rows)
    return DiagGaussian(ad.reshape(g.mean, (b, p)), ad.reshape(g.logvar, (b, p)))


def pointwise_inputs(points, zf):
    """Rows ``[x_p, zf_b]`` ordered batch-major: row ``b * P + p``."""
    pts = ad.value(points) if not isinstance(points, (ad.Tensor, ad.Dual)) else points
    zf_v = ad.value(zf)
    b, p = zf_v.shape[0], ad.value(points).shape[0]
    idx_b = np.repeat(np.arange(b), p)
    idx_p = np.tile(np.arange(p), b)
    return ad.concatenate([ad.take(pts, idx_p), ad.take(zf, idx_b)], axis=1)


def beta_inverse(head: NetworkHead, u_repr, f) -> DiagGaussian:
    """p_beta(z | u, f) from a solution representation and the forcing."""
    x = ad.concatenate([as_rows(u_repr), as_rows(f)], axis=1)
    _check_width("beta", x, head.in_dim)
    return head_apply(head, x)


def phi_encode(head: NetworkHead, y) -> DiagGaussian:
    """q_phi(u | y) from (possibly truncated) noisy observations."""
    y2 = as_rows(y)
    _check_width("phi", y2, head.in_dim)
    return head_apply(head, y2)

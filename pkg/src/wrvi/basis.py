"""Chebyshev fields, Gaussian pushforward and the unscented transform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

TRANSFORMS = ("identity", "softplus", "softplus_plus_one", "sigmoid")

_DOMAIN_TOL = 1e-12


def map_to_reference(points, domain) -> np.ndarray:
    a, b = float(domain[0]), float(domain[1])
    if not b > a:
        raise ValueError(f"domain must have positive width, got {domain}")
    points = np.asarray(points, dtype=np.float64)
    if np.any(points < a - _DOMAIN_TOL) or np.any(points > b + _DOMAIN_TOL):
        bad = points[(points < a - _DOMAIN_TOL) | (points > b + _DOMAIN_TOL)]
        raise ValueError(f"points outside domain [{a}, {b}]: {bad[:5]}")
    return np.clip((2.0 * points - (a + b)) / (b - a), -1.0, 1.0)


def chebyshev_vandermonde(order: int, points, domain=(-1.0, 1.0)) -> np.ndarray:
    """Matrix ``T[i, k] = T_k(x_i)`` on the affinely mapped points."""
    if order < 0:
        raise ValueError("order must be >= 0")
    x = map_to_reference(np.atleast_1d(points), domain)
    out = np.empty((x.size, order + 1))
    out[:, 0] = 1.0
    if order >= 1:
        out[:, 1] = x
    for k in range(1, order):
        out[:, k + 1] = 2.0 * x * out[:, k] - out[:, k - 1]
    return out


def clenshaw(coeffs, points, domain=(-1.0, 1.0)) -> np.ndarray:
    """Evaluate sum_k c_k T_k(x) by Clenshaw's backward recurrence."""
    x = map_to_reference(np.atleast_1d(points), domain)
    c = np.asarray(coeffs, dtype=np.float64)
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for ck in c[:0:-1]:
        b1, b2 = 2.0 * x * b1 - b2 + ck, b1
    return x * b1 - b2 + c[0]


def apply_transform(name: str, x):
    if name == "identity":
        return x
    if name == "softplus":
        return ad.softplus(x)
    if name == "softplus_plus_one":
        return ad.add(ad.softplus(x), 1.0)
    if name == "sigmoid":
        return ad.sigmoid(x)
    raise ValueError(f"unknown transform {name!r}; expected one of {TRANSFORMS}")


def transform_numpy(name: str, x: np.ndarray) -> np.ndarray:
    return ad.value(apply_transform(name, np.asarray(x, dtype=np.float64)))


@dataclass
class ChebyshevField:
    coeffs: np.ndarray
    domain: tuple = (-1.0, 1.0)
    transform: str = "identity"

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if not self.domain[1] > self.domain[0]:
            raise ValueError("domain must have positive width")

    @property
    def order(self) -> int:
        return len(ad.value(self.coeffs)) - 1

    def __call__(self, points) -> np.ndarray:
        return ad.value(project_to_fem(self, points))


def project_to_fem(field: ChebyshevField, mesh_nodes, vandermonde=None):
    """``transform(T @ coeffs)`` at the mesh nodes; batched over leading axes of coeffs."""
    if vandermonde is None:
        vandermonde = chebyshev_vandermonde(field.order, mesh_nodes, field.domain)
    raw = ad.matmul(field.coeffs, vandermonde.T)
    return apply_transform(field.transform, raw)


def lstsq_coefficients(values, points, order: int, domain=(-1.0, 1.0)) -> np.ndarray:
    """Least-squares Chebyshev coefficients of nodal values (rows are samples)."""
    v = chebyshev_vandermonde(order, points, domain)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    coef, *_ = np.linalg.lstsq(v, values.T, rcond=None)
    return coef.T


def pushforward_gaussian(mean, diag_cov, vandermonde):
    """Pushforward of N(mean, diag(diag_cov)) through the linear map ``T``."""
    mean = np.asarray(mean, dtype=np.float64)
    diag_cov = np.asarray(diag_cov, dtype=np.float64)
    t = np.asarray(vandermonde, dtype=np.float64)
    if mean.shape[-1] != t.shape[1] or diag_cov.shape != mean.shape:
        raise ValueError(f"dimension mismatch: mean {mean.shape}, cov {diag_cov.shape}, T {t.shape}")
    mesh_mean = mean @ t.T
    mesh_cov = (t * diag_cov[..., None, :]) @ t.T
    return mesh_mean, mesh_cov


def sigma_points(mean, diag_cov, kappa: float | None = None):
    """Classical 2d+1 sigma points; ``kappa`` defaults to ``3 - d``."""
    mean = np.asarray(mean, dtype=np.float64)
    diag_cov = np.asarray(diag_cov, dtype=np.float64)
    if np.any(diag_cov < 0):
        raise ValueError("variances must be non-negative")
    d = mean.size
    if kappa is None:
        kappa = 3.0 - d
    spread = np.sqrt((d + kappa) * diag_cov)
    pts = np.tile(mean, (2 * d + 1, 1))
    idx = np.arange(d)
    pts[1 + idx, idx] += spread
    pts[1 + d + idx, idx] -= spread
    w = np.full(2 * d + 1, 1.0 / (2.0 * (d + kappa)))
    w[0] = kappa / (d + kappa)
    return pts, w


def unscented_moments(mean, diag_cov, transform, kappa: float | None = None):
    """Mean and marginal variances of ``transform(x)`` for x ~ N(mean, diag(diag_cov)).

    ``transform`` acts pointwise; it may be a callable on arrays or a name
    from :data:`TRANSFORMS`.
    """
    if isinstance(transform, str):
        name = transform
        transform = lambda x: transform_numpy(name, x)  # noqa: E731
    pts, w = sigma_points(mean, diag_cov, kappa)
    y = transform(pts)
    t_mean = w @ y
    t_var = w @ (y - t_mean) ** 2
    return t_mean, t_var


def unscented_marginals(mean, var, transform):
    """Per-coordinate 1D unscented moments, vectorised over arrays of any shape."""
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("variances must be non-negative")
    if isinstance(transform, str):
        name = transform
        transform = lambda x: transform_numpy(name, x)  # noqa: E731
    # d = 1, kappa = 2: weights (2/3, 1/6, 1/6), spread sqrt(3 var)
    spread = np.sqrt(3.0 * var)
    y0, yp, ym = transform(mean), transform(mean + spread), transform(mean - spread)
    m = (2.0 * y0 + 0.5 * (yp + ym)) / 3.0
    v = (2.0 * (y0 - m) ** 2 + 0.5 * ((yp - m) ** 2 + (ym - m) ** 2)) / 3.0
    return m, v

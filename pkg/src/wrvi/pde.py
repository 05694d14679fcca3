"""Residual backends: Galerkin FEM for 1D Poisson, collocation for heat and wave.

Only two weight-function families are implemented: hat-function Galerkin
(``w_i = phi_i``) and point collocation (``w_i = delta(x - x_i)``).
Subdomain, least-squares and moment weights fit the same residual interface
but are not provided.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .basis import apply_transform, chebyshev_vandermonde, transform_numpy
from .prob import DiagGaussian, PriorSpec, alpha_forward, head_apply, pointwise_inputs, sample_reparam

POISSON_KINDS = ("nonlinear_poisson", "linear_poisson")
COLLOCATION_KINDS = ("heat_collocation", "wave_collocation")
KINDS = POISSON_KINDS + COLLOCATION_KINDS


class OracleError(RuntimeError):
    def __init__(self, message: str, residual_norm: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


# ------------------------------------------------------------------ shared

@dataclass
class ResidualCovariance:
    """Diagonal residual covariance given by per-row standard deviations."""

    stdevs: np.ndarray

    def __post_init__(self):
        self.stdevs = np.asarray(self.stdevs, dtype=np.float64)
        if np.any(self.stdevs <= 0):
            raise ValueError("residual standard deviations must be positive")
        self._log_norm = -float(np.sum(np.log(self.stdevs))) - 0.5 * self.stdevs.size * np.log(2.0 * np.pi)
        self._inv = 1.0 / self.stdevs

    @classmethod
    def uniform(cls, eps: float, size: int) -> "ResidualCovariance":
        return cls(np.full(size, float(eps)))

    @classmethod
    def blocks(cls, eps_domain: float, n_domain: int, eps_boundary: float, n_boundary: int,
               eps_initial: float, n_initial: int) -> "ResidualCovariance":
        return cls(np.concatenate([np.full(n_domain, eps_domain), np.full(n_boundary, eps_boundary),
                                   np.full(n_initial, eps_initial)]))

    @property
    def size(self) -> int:
        return self.stdevs.size

    def log_likelihood_zero(self, r):
        """log N(0; r, diag(stdevs^2)) summed over the last axis."""
        if ad.value(r).shape[-1] != self.size:
            raise ad.ShapeError(f"residual length {ad.value(r).shape[-1]} != covariance size {self.size}")
        quad = ad.sum(ad.square(ad.mul(r, self._inv)), axis=-1)
        return ad.add(ad.mul(quad, -0.5), self._log_norm)


class ProblemSpec:
    """Common surface used by the trainer and the evaluators."""

    kind: str
    z_prior: PriorSpec
    f_prior: PriorSpec
    residual_cov: ResidualCovariance
    pointwise: bool = False

    @property
    def u_dim(self) -> int:
        raise NotImplementedError

    @property
    def alpha_in_dim(self) -> int:
        return self.z_prior.dim + self.f_prior.dim + (2 if self.pointwise else 0)

    @property
    def beta_in_dim(self) -> int:
        return self.u_dim + self.f_prior.dim

    def forward_sample(self, alpha_head, z, f, noise):
        """Sample u ~ q_alpha(u | z, f) and evaluate the residual.

        Returns ``(u, q_alpha, r)`` with ``u`` of shape (B, u_dim), which is
        also what the inverse network consumes.
        """
        raise NotImplementedError


# ------------------------------------------------------------------- FEM

@dataclass
class Mesh1D:
    nodes: np.ndarray
    dirichlet: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        if self.nodes.ndim != 1 or self.nodes.size < 2:
            raise ValueError("mesh needs at least one element")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")

    @classmethod
    def uniform(cls, n_elements: int, domain=(-1.0, 1.0), dirichlet=(0.0, 0.0)) -> "Mesh1D":
        return cls(np.linspace(domain[0], domain[1], n_elements + 1), tuple(dirichlet))

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def domain(self) -> tuple:
        return float(self.nodes[0]), float(self.nodes[-1])

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)


class PoissonProblem(ProblemSpec):
    """-d/dx(eta dU/dx) = f on a 1D mesh with Dirichlet ends.

    ``nonlinear_poisson`` uses eta = (S(|u'|) + 5 kappa) / 10 with S the
    logistic function; ``linear_poisson`` uses eta = kappa.  kappa and f are
    Chebyshev fields, the solution is a Chebyshev expansion projected onto
    the hat-function nodes.
    """

    def __init__(self, kind: str, mesh: Mesh1D, z_prior: PriorSpec, f_prior: PriorSpec, eps_u: float,
                 solution_order: int = 9, kappa_order: int = 4, forcing_order: int = 3,
                 kappa_transform: str = "softplus", quad_points: int = 3, precondition: bool = False):
        if kind not in POISSON_KINDS:
            raise ValueError(f"unknown Poisson kind {kind!r}")
        if min(solution_order, kappa_order, forcing_order) < 0:
            raise ValueError("Chebyshev orders must be >= 0")
        self.kind = kind
        self.mesh = mesh
        self.z_prior = z_prior
        self.f_prior = f_prior
        self.solution_order = solution_order
        self.kappa_order = kappa_order
        self.forcing_order = forcing_order
        self.kappa_transform = kappa_transform
        self.quad_points = quad_points
        self.residual_cov = ResidualCovariance.uniform(eps_u, mesh.nodes.size)
        self._check_layout()
        self._setup_quadrature()
        self.precondition = False
        self.preconditioner = None
        if precondition:
            self.preconditioner = ad.LinearSolver(self.reference_stiffness())
            self.precondition = True

    def _check_layout(self):
        zs = self.z_prior.slices()
        if "kappa" not in zs or zs["kappa"].stop - zs["kappa"].start != self.kappa_order + 1:
            raise ValueError(f"z prior needs a 'kappa' block of size {self.kappa_order + 1}")
        known = {"kappa", "omega_l", "omega_r"}
        extra = set(zs) - known
        if extra:
            raise ValueError(f"unknown z blocks {sorted(extra)}; expected a subset of {sorted(known)}")
        fs = self.f_prior.slices()
        if "f" not in fs or fs["f"].stop - fs["f"].start != self.forcing_order + 1 or len(fs) != 1:
            raise ValueError(f"f prior needs exactly one 'f' block of size {self.forcing_order + 1}")

    def _setup_quadrature(self):
        mesh = self.mesh
        xi, w = np.polynomial.legendre.leggauss(self.quad_points)
        h = mesh.h
        ne, nq = mesh.n_elements, self.quad_points
        xq = mesh.nodes[:-1, None] + 0.5 * h[:, None] * (xi[None, :] + 1.0)
        self.xq = xq
        dom = mesh.domain
        self.V_u = chebyshev_vandermonde(self.solution_order, mesh.nodes, dom)
        self.V_kappa_nodes = chebyshev_vandermonde(self.kappa_order, mesh.nodes, dom)
        self.V_kappa_q = chebyshev_vandermonde(self.kappa_order, xq.ravel(), dom)
        self.V_f_q = chebyshev_vandermonde(self.forcing_order, xq.ravel(), dom)
        # element average of a quadrature-point field: (ne*nq, ne)
        avg = np.zeros((ne * nq, ne))
        load_l = np.zeros((ne * nq, ne))
        load_r = np.zeros((ne * nq, ne))
        phi_r = 0.5 * (xi + 1.0)
        for e in range(ne):
            rows = slice(e * nq, (e + 1) * nq)
            avg[rows, e] = 0.5 * w
            load_l[rows, e] = 0.5 * h[e] * w * (1.0 - phi_r)
            load_r[rows, e] = 0.5 * h[e] * w * phi_r
        self.elem_avg = avg
        # interior row i (node i, 1..n-1) collects flux_{i-1} - flux_i and loads
        nn = mesh.nodes.size
        diff = np.zeros((ne, nn - 2))
        for i in range(1, nn - 1):
            diff[i - 1, i - 1] = 1.0
            diff[i, i - 1] = -1.0
        self.flux_to_rows = diff
        self.load_to_rows = load_r[:, :-1] + load_l[:, 1:] if nn > 2 else np.zeros((ne * nq, 0))
        # slope s_e = grad_op @ u
        grad_op = np.zeros((ne, nn))
        grad_op[np.arange(ne), np.arange(ne)] = -1.0 / h
        grad_op[np.arange(ne), np.arange(1, nn)] = 1.0 / h
        self.grad_op = grad_op

    # -- layout helpers
    @property
    def u_dim(self) -> int:
        return self.solution_order + 1

    @property
    def n_nodes(self) -> int:
        return self.mesh.nodes.size

    def split_z(self, z):
        """(kappa coefficients, omega_l, omega_r), each batched as (B, .)."""
        zs = self.z_prior.slices()
        z = z if isinstance(z, (ad.Tensor, ad.Dual)) else np.atleast_2d(np.asarray(z, dtype=np.float64))
        kap = z[:, zs["kappa"]]
        b = ad.value(z).shape[0]
        om_l = z[:, zs["omega_l"]] if "omega_l" in zs else np.full((b, 1), self.mesh.dirichlet[0])
        om_r = z[:, zs["omega_r"]] if "omega_r" in zs else np.full((b, 1), self.mesh.dirichlet[1])
        return kap, om_l, om_r

    def kappa_field(self, kappa_coeffs, vandermonde=None):
        v = self.V_kappa_nodes if vandermonde is None else vandermonde
        return apply_transform(self.kappa_transform, ad.matmul(kappa_coeffs, v.T))

    def kappa_nodal(self, z) -> np.ndarray:
        kap, _, _ = self.split_z(np.atleast_2d(z))
        return ad.value(self.kappa_field(kap))

    def u_nodal(self, u_coeffs):
        return ad.matmul(u_coeffs, self.V_u.T)

    # -- residual
    def residual_nodal(self, u_nodal, z, f):
        """Galerkin residual at FE nodes (B, n_nodes); boundary rows read u - omega."""
        u_nodal = u_nodal if isinstance(u_nodal, (ad.Tensor, ad.Dual)) else np.atleast_2d(np.asarray(u_nodal, dtype=float))
        f = f if isinstance(f, (ad.Tensor, ad.Dual)) else np.atleast_2d(np.asarray(f, dtype=float))
        kap, om_l, om_r = self.split_z(z)
        kq = self.kappa_field(kap, self.V_kappa_q)
        kbar = ad.matmul(kq, self.elem_avg)
        slope = ad.matmul(u_nodal, self.grad_op.T)
        if self.kind == "nonlinear_poisson":
            eta = ad.add(ad.mul(ad.sigmoid(ad.absolute(slope)), 0.1), ad.mul(kbar, 0.5))
        else:
            eta = kbar
        flux = ad.mul(eta, slope)
        fq = ad.matmul(f, self.V_f_q.T)
        interior = ad.sub(ad.matmul(flux, self.flux_to_rows), ad.matmul(fq, self.load_to_rows))
        n = self.n_nodes
        left = ad.sub(u_nodal[:, 0:1], om_l)
        right = ad.sub(u_nodal[:, n - 1:n], om_r)
        r = ad.concatenate([left, interior, right], axis=1)
        return r

    def residual(self, u_coeffs, z, f):
        r = self.residual_nodal(self.u_nodal(u_coeffs), z, f)
        if self.precondition:
            r = precondition_residual(self, r)
        return r

    def jacobian_nodal(self, u_nodal: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Analytic d r / d u_nodal for a single sample."""
        kap, _, _ = self.split_z(np.atleast_2d(z))
        kbar = ad.value(ad.matmul(self.kappa_field(kap, self.V_kappa_q), self.elem_avg))[0]
        s = self.grad_op @ np.asarray(u_nodal, dtype=float).ravel()
        if self.kind == "nonlinear_poisson":
            a = np.abs(s)
            sig = expit(a)
            dflux = 0.1 * sig + 0.5 * kbar + 0.1 * sig * (1.0 - sig) * a
        else:
            dflux = kbar
        interior = self.flux_to_rows.T @ (dflux[:, None] * self.grad_op)
        n = self.n_nodes
        jac = np.zeros((n, n))
        jac[0, 0] = 1.0
        jac[n - 1, n - 1] = 1.0
        jac[1:n - 1] = interior
        return jac

    def reference_stiffness(self) -> np.ndarray:
        """Tangent stiffness at the prior-mean parameters and u = 0."""
        return self.jacobian_nodal(np.zeros(self.n_nodes), self.z_prior.mean[None, :])

    def forward_sample(self, alpha_head, z, f, noise):
        g = alpha_forward(alpha_head, z, f)
        u = sample_reparam(g, noise)
        return u, g, self.residual(u, z, f)


def assemble_poisson_residual(spec: PoissonProblem, z, u_nodal, f_coeffs):
    return spec.residual_nodal(u_nodal, z, f_coeffs)


def precondition_residual(spec: PoissonProblem, r_raw):
    """Solve A_ref r_tilde = r_raw with the cached reference factorization."""
    if spec.preconditioner is None:
        return r_raw
    return ad.solve_const(spec.preconditioner, r_raw)


def newton_solve(spec: PoissonProblem, z, f_coeffs, init=None, tol: float = 1e-10, max_iter: int = 50,
                 precondition: bool = False, max_halvings: int = 10) -> np.ndarray:
    """Damped Newton on the nodal Galerkin system; validation only."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    f_coeffs = np.atleast_2d(np.asarray(f_coeffs, dtype=float))
    u = np.zeros(spec.n_nodes) if init is None else np.array(init, dtype=float).ravel()
    pre = spec.preconditioner if precondition else None
    if precondition and pre is None:
        pre = ad.LinearSolver(spec.reference_stiffness())

    def res(v):
        r = ad.value(spec.residual_nodal(v[None, :], z, f_coeffs))[0]
        return pre.solve(r) if pre is not None else r

    r = res(u)
    norm = np.max(np.abs(r))
    for it in range(max_iter):
        if norm <= tol:
            return u
        jac = spec.jacobian_nodal(u, z)
        if pre is not None:
            jac = pre.solve(jac.T).T
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise OracleError(f"singular Jacobian at iteration {it}", norm, it) from exc
        lam = 1.0
        for _ in range(max_halvings + 1):
            cand = u - lam * step
            r_c = res(cand)
            n_c = np.max(np.abs(r_c))
            if np.isfinite(n_c) and n_c < norm:
                break
            lam *= 0.5
        else:
            raise OracleError(f"line search failed at iteration {it}", norm, it)
        u, r, norm = cand, r_c, n_c
    if norm <= tol:
        return u
    raise OracleError(f"no convergence in {max_iter} iterations (residual {norm:.3e})", norm, max_iter)


# ------------------------------------------------------------- collocation

@dataclass
class CollocationGrid:
    """Tensor grid of x (ends included) and t (t=0 included).

    Point ``(ix, it)`` has flat index ``ix * n_t_total + it``.  Domain points
    are interior in x with t > 0, boundary points sit on the x ends with
    t > 0, and initial points are every x at t = 0.
    """

    xs: np.ndarray
    ts: np.ndarray
    domain_idx: np.ndarray = field(init=False)
    boundary_idx: np.ndarray = field(init=False)
    initial_idx: np.ndarray = field(init=False)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ts = np.asarray(self.ts, dtype=float)
        if self.xs.size < 3 or self.ts.size < 2:
            raise ValueError("grid needs interior, boundary and initial points")
        nx, nt = self.xs.size, self.ts.size
        ix, it = np.meshgrid(np.arange(nx), np.arange(nt), indexing="ij")
        ix, it = ix.ravel(), it.ravel()
        flat = np.arange(nx * nt)
        self.domain_idx = flat[(ix > 0) & (ix < nx - 1) & (it > 0)]
        self.boundary_idx = flat[((ix == 0) | (ix == nx - 1)) & (it > 0)]
        self.initial_idx = flat[it == 0]

    @classmethod
    def uniform(cls, n_x: int, n_t: int, x_max: float = 2 * np.pi, t_max: float = 1.0) -> "CollocationGrid":
        return cls(np.linspace(0.0, x_max, n_x + 2), np.linspace(0.0, t_max, n_t + 1))

    @property
    def points(self) -> np.ndarray:
        xx, tt = np.meshgrid(self.xs, self.ts, indexing="ij")
        return np.stack([xx.ravel(), tt.ravel()], axis=1)

    @property
    def n_points(self) -> int:
        return self.xs.size * self.ts.size

    @property
    def shape(self) -> tuple:
        return self.xs.size, self.ts.size


@dataclass
class FieldValues:
    """Field and derivatives at a set of points, each (B, P)."""

    u: object
    u_t: object = None
    u_x: object = None
    u_xx: object = None
    u_tt: object = None


def network_field(head, z, f):
    """Evaluator returning derivatives of the alpha-network mean by forward tangents."""
    z2 = z if isinstance(z, (ad.Tensor, ad.Dual)) else np.atleast_2d(np.asarray(z, dtype=float))
    f2 = f if isinstance(f, (ad.Tensor, ad.Dual)) else np.atleast_2d(np.asarray(f, dtype=float)).reshape(ad.value(z2).shape[0], -1)
    zf = ad.concatenate([z2, f2], axis=1)
    b = ad.value(zf).shape[0]

    def evaluate(points, needs=("u_t", "u_x", "u_xx")) -> FieldValues:
        points = np.asarray(points, dtype=float)
        p = points.shape[0]
        rows = pointwise_inputs(points, zf)
        shape = (b, p)

        def mean_fn(r):
            return head_apply(head, r).mean

        ex = np.zeros(ad.value(rows).shape)
        ex[:, 0] = 1.0
        et = np.zeros(ad.value(rows).shape)
        et[:, 1] = 1.0
        out = FieldValues(u=None)
        if "u_xx" in needs:
            ux, uxx = ad.jvp(lambda r: ad.jvp(mean_fn, r, ex)[1], rows, ex)
            out.u_x, out.u_xx = ad.reshape(ux, shape), ad.reshape(uxx, shape)
        elif "u_x" in needs:
            _, ux = ad.jvp(mean_fn, rows, ex)
            out.u_x = ad.reshape(ux, shape)
        if "u_tt" in needs:
            ut, utt = ad.jvp(lambda r: ad.jvp(mean_fn, r, et)[1], rows, et)
            out.u_t, out.u_tt = ad.reshape(ut, shape), ad.reshape(utt, shape)
            u = mean_fn(rows)
        elif "u_t" in needs:
            u, ut = ad.jvp(mean_fn, rows, et)
            out.u_t = ad.reshape(ut, shape)
        else:
            u = mean_fn(rows)
        out.u = ad.reshape(u, shape)
        return out

    return evaluate


class CollocationProblem(ProblemSpec):
    pointwise = True
    domain_needs: tuple = ()
    initial_needs: tuple = ()

    def __init__(self, grid: CollocationGrid, z_prior: PriorSpec, f_prior: PriorSpec,
                 eps_domain: float = 0.01, eps_boundary: float = 0.001, eps_initial: float = 0.001):
        self.grid = grid
        self.z_prior = z_prior
        self.f_prior = f_prior
        self.precondition = False
        n_init_rows = grid.initial_idx.size * self.initial_rows_per_point
        self.residual_cov = ResidualCovariance.blocks(
            eps_domain, grid.domain_idx.size, eps_boundary, grid.boundary_idx.size, eps_initial, n_init_rows
        )
        self._check_layout()

    initial_rows_per_point = 1

    def _check_layout(self):
        pass

    @property
    def u_dim(self) -> int:
        return self.grid.n_points

    def u_nodal(self, u):
        return u

    def domain_rows(self, fv: FieldValues, z, x: np.ndarray):
        raise NotImplementedError

    def boundary_rows(self, u_b, x: np.ndarray, t: np.ndarray, z):
        raise NotImplementedError

    def initial_rows(self, u_i, fv_i: FieldValues | None, x: np.ndarray, z):
        raise NotImplementedError

    def collocation_residual(self, evaluator, z, u_field=None):
        """Stacked [domain; boundary; initial] residual rows, shape (B, rows).

        ``evaluator(points, needs)`` returns :class:`FieldValues`.  When
        ``u_field`` (B, n_points) is given, boundary and initial value rows
        read it instead of the evaluator.
        """
        z = z if isinstance(z, (ad.Tensor, ad.Dual)) else np.atleast_2d(np.asarray(z, dtype=float))
        g = self.grid
        pts = g.points
        dom = pts[g.domain_idx]
        fv = evaluator(dom, self.domain_needs)
        r_dom = self.domain_rows(fv, z, dom[:, 0])
        bnd = pts[g.boundary_idx]
        ini = pts[g.initial_idx]
        if u_field is None:
            u_b = evaluator(bnd, ()).u
            fv_i = evaluator(ini, self.initial_needs)
            u_i = fv_i.u
        else:
            u_b = u_field[:, g.boundary_idx]
            u_i = u_field[:, g.initial_idx]
            fv_i = evaluator(ini, self.initial_needs) if self.initial_needs else None
        r_b = self.boundary_rows(u_b, bnd[:, 0], bnd[:, 1], z)
        r_i = self.initial_rows(u_i, fv_i, ini[:, 0], z)
        return ad.concatenate([r_dom, r_b, r_i], axis=1)

    def forward_sample(self, alpha_head, z, f, noise):
        g = alpha_forward(alpha_head, z, f, points=self.grid.points)
        u = sample_reparam(g, noise)
        r = self.collocation_residual(network_field(alpha_head, z, f), z, u_field=u)
        return u, g, r


class HeatProblem(CollocationProblem):
    """u_t = (1/gamma) d/dx(eta(u, kappa) u_x), eta = (u kappa^2 + 1) / kappa.

    Boundary u = 1 at both ends, initial u(x, 0) = sin x + 1.  With
    ``conductivity="constant"`` eta = 1 (a linear test PDE).
    """

    kind = "heat_collocation"
    domain_needs = ("u_t", "u_x", "u_xx")
    initial_needs = ()

    def __init__(self, grid, z_prior, f_prior, eps_domain=0.01, eps_boundary=0.001, eps_initial=0.001,
                 conductivity: str = "nonlinear"):
        if conductivity not in ("nonlinear", "constant"):
            raise ValueError(f"unknown conductivity {conductivity!r}")
        self.conductivity = conductivity
        super().__init__(grid, z_prior, f_prior, eps_domain, eps_boundary, eps_initial)

    def _check_layout(self):
        names = [b.name for b in self.z_prior.blocks]
        if names != ["kappa", "gamma"] or self.z_prior.dim != 2:
            raise ValueError("heat problem expects z blocks ['kappa', 'gamma'] of size 1 each")

    def domain_rows(self, fv, z, x):
        kappa, gamma = z[:, 0:1], z[:, 1:2]
        if np.any(ad.value(kappa) <= 0):
            raise ValueError("kappa must be positive")
        if self.conductivity == "nonlinear":
            eta = ad.add(ad.mul(fv.u, kappa), ad.div(1.0, kappa))
            eta_u = kappa
        else:
            eta, eta_u = 1.0, 0.0
        flux_div = ad.add(ad.mul(eta_u, ad.square(fv.u_x)), ad.mul(eta, fv.u_xx))
        return ad.sub(ad.div(flux_div, gamma), fv.u_t)

    def boundary_rows(self, u_b, x, t, z):
        return ad.sub(u_b, 1.0)

    def initial_rows(self, u_i, fv_i, x, z):
        return ad.sub(u_i, np.sin(x) + 1.0)


class WaveProblem(CollocationProblem):
    """u_tt - u_xx = sum_p a_p x^p with u(x,0)=sin x, u_t(x,0)=-cos x and
    Dirichlet ends matching sin(x - t)."""

    kind = "wave_collocation"
    domain_needs = ("u_xx", "u_tt")
    initial_needs = ("u_t",)
    initial_rows_per_point = 2

    def _check_layout(self):
        names = [b.name for b in self.z_prior.blocks]
        if names != ["a"]:
            raise ValueError("wave problem expects a single z block 'a' of forcing coefficients")

    def forcing(self, z, x):
        n = self.z_prior.dim
        powers = x[None, :] ** np.arange(n)[:, None]
        return ad.matmul(z, powers)

    def domain_rows(self, fv, z, x):
        return ad.sub(ad.sub(fv.u_tt, fv.u_xx), self.forcing(z, x))

    def boundary_rows(self, u_b, x, t, z):
        return ad.sub(u_b, np.sin(x - t))

    def initial_rows(self, u_i, fv_i, x, z):
        return ad.concatenate([ad.sub(u_i, np.sin(x)), ad.add(fv_i.u_t, np.cos(x))], axis=1)


def collocation_residual(spec: CollocationProblem, field_evaluator, z, u_field=None):
    return spec.collocation_residual(field_evaluator, z, u_field)


def exact_field(u, u_t, u_x, u_xx, u_tt=None, batch: int = 1):
    """Evaluator from closed-form callables of (x, t), for manufactured tests."""

    def evaluate(points, needs=()):
        x, t = points[:, 0], points[:, 1]
        tile = lambda fn: None if fn is None else np.tile(fn(x, t), (batch, 1))  # noqa: E731
        return FieldValues(tile(u), tile(u_t), tile(u_x), tile(u_xx), tile(u_tt))

    return evaluate

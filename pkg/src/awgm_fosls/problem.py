"""PDE problem data: diffusion, nonlinearity, forcing, boundary data.

Forcings expose exact per-cell quadrature values plus, where the default
rule cannot integrate them exactly (non-polynomial closed forms), analytic
moment and square-integral routines. Data-oscillation integrals use a
higher-order data rule so polynomial forcings up to degree 6 stay exact.
"""

import numpy as np

from . import mesh, quadrature
from .errors import ConfigError, QuadratureCapacityError


# ---------------------------------------------------------------------------
# forcings


class Forcing:
    degree = None  # polynomial degree, or None for closed forms

    def values(self, pts):
        """Exact values; pts shape (..., dim) or (...,) in 1D."""
        raise NotImplementedError

    def moments(self, domain, tiling, level):
        """Per-cell moments against the P2 nodal basis, shape (ncell, nn).

        Default: via the data quadrature rule (exact for degree <= 10 in 1D
        / <= 9 on triangles with the n=8 rule).
        """
        from .poly import quad_points

        ref = tiling.ref
        g = tiling.geo(level)
        pts = quad_points(domain, tiling, level)
        vals = self.values(pts[..., 0] if domain.dim == 1 else pts)
        return (vals @ ref.moment_matrix()) * g["scale"][:, None]

    def square_integral(self, domain, cid):
        """Integral of f^2 over one cell (exact, data rule by default)."""
        x, w, scale = _data_rule(domain, cid)
        v = self.values(x)
        return float(scale * (v**2 @ w))

    def monomial_moments(self, domain, cid, deg):
        """Moments of f against local monomials of total degree <= deg."""
        x, w, scale = _data_rule(domain, cid)
        P = _monomials(domain, cid, x, deg)
        v = self.values(x)
        return scale * (P.T @ (w * v))


def _data_rule(domain, cid):
    """Quadrature nodes/weights/scale on one cell at the data order."""
    if domain.dim == 1:
        a, h = domain.geometry(np.array([cid]))
        qx, qw = quadrature.leggauss01(quadrature.DATA_Q1D)
        return a[0] + h[0] * qx, qw, h[0]
    v0, e1, e2 = domain.geometry_one(cid)
    qp, qw = quadrature.duffy_rule(quadrature.DATA_Q1D)
    pts = v0 + np.outer(qp[:, 0], e1) + np.outer(qp[:, 1], e2)
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])
    return pts, qw, det


def _monomials(domain, cid, x, deg):
    """Monomial basis values in cell-local coordinates."""
    if domain.dim == 1:
        a, h = domain.geometry(np.array([cid]))
        t = (x - a[0]) / h[0]
        return np.stack([t**j for j in range(deg + 1)], axis=1)
    v0, e1, e2 = domain.geometry_one(cid)
    d = x - v0
    det = e1[0] * e2[1] - e1[1] * e2[0]
    s = (d[:, 0] * e2[1] - d[:, 1] * e2[0]) / det
    t = (e1[0] * d[:, 1] - e1[1] * d[:, 0]) / det
    cols = [np.ones_like(s)]
    if deg >= 1:
        cols += [s, t]
    if deg >= 2:
        cols += [s * s, s * t, t * t]
    return np.stack(cols, axis=1)


def osc_monomial(domain, cid, forcing, deg):
    """inf over degree-deg polynomials of ||f - p||_L2(cell)^2, exact."""
    x, w, scale = _data_rule(domain, cid)
    P = _monomials(domain, cid, x, deg)
    G = scale * (P.T @ (w[:, None] * P))
    m = forcing.monomial_moments(domain, cid, deg)
    c = np.linalg.solve(G, m)
    val = forcing.square_integral(domain, cid) - float(m @ c)
    return max(val, 0.0)


class ConstForcing(Forcing):
    degree = 0

    def __init__(self, c):
        self.c = float(c)

    def values(self, pts):
        base = pts[..., 0] if pts.ndim > 1 and pts.shape[-1] in (1, 2) else pts
        return np.full(np.shape(base), self.c)


class PolyForcing1D(Forcing):
    """f(x) = sum_j coeffs[j] x^j."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.degree = len(self.coeffs) - 1
        if self.degree > 6:
            raise QuadratureCapacityError("polynomial forcing degree > 6")

    def values(self, pts):
        x = pts[..., 0] if np.ndim(pts) > 0 and np.shape(pts)[-1] == 1 else pts
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)


class Poly2DForcing(Forcing):
    """f(x, y) = sum c[i, j] x^i y^j (total degree <= 6)."""

    def __init__(self, cmat):
        self.cmat = np.asarray(cmat, dtype=float)
        self.degree = (self.cmat.shape[0] - 1) + (self.cmat.shape[1] - 1)
        if self.degree > 6:
            raise QuadratureCapacityError("polynomial forcing degree > 6")

    def values(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.polynomial.polynomial.polyval2d(pts[..., 0], pts[..., 1], self.cmat)


class SinForcing1D(Forcing):
    """f(x) = sum_k amps[k] sin(freqs[k] * x); analytic moments."""

    degree = None

    def __init__(self, amps, freqs):
        self.amps = np.atleast_1d(np.asarray(amps, dtype=float))
        self.freqs = np.atleast_1d(np.asarray(freqs, dtype=float))

    def values(self, pts):
        x = pts[..., 0] if np.ndim(pts) > 0 and np.shape(pts)[-1] == 1 else np.asarray(pts)
        out = np.zeros_like(np.asarray(x, dtype=float))
        for a, c in zip(self.amps, self.freqs):
            out += a * np.sin(c * x)
        return out

    @staticmethod
    def _prim(c, a, b):
        """(I0, I1, I2) with Ik = integral_a^b x^k sin(c x) dx, closed form."""
        sa, ca = np.sin(c * a), np.cos(c * a)
        sb, cb = np.sin(c * b), np.cos(c * b)
        i0 = (ca - cb) / c
        i1 = (sb - c * b * cb - (sa - c * a * ca)) / c**2
        i2 = (2 * c * b * sb + (2 - c**2 * b**2) * cb
              - (2 * c * a * sa + (2 - c**2 * a**2) * ca)) / c**3
        return i0, i1, i2

    def moments(self, domain, tiling, level):
        g = tiling.geo(level)
        a = g["a"]
        b = a + g["h"]
        out = np.zeros((len(a), 3))
        for amp, c in zip(self.amps, self.freqs):
            i0, i1, i2 = self._prim(c, a, b)
            # monomial moments in local coords t = (x-a)/h
            h = g["h"]
            m0 = i0
            m1 = (i1 - a * i0) / h
            m2 = (i2 - 2 * a * i1 + a**2 * i0) / h**2
            # P2 nodal: N0 = 1-3t+2t^2, N1 = 4t-4t^2, N2 = -t+2t^2
            out[:, 0] += amp * (m0 - 3 * m1 + 2 * m2)
            out[:, 1] += amp * (4 * m1 - 4 * m2)
            out[:, 2] += amp * (-m1 + 2 * m2)
        return out

    def monomial_moments(self, domain, cid, deg):
        a, h = domain.geometry(np.array([cid]))
        a, h = a[0], h[0]
        out = np.zeros(deg + 1)
        for amp, c in zip(self.amps, self.freqs):
            i0, i1, i2 = self._prim(c, np.array([a]), np.array([a + h]))
            loc = [i0[0], (i1[0] - a * i0[0]) / h, (i2[0] - 2 * a * i1[0] + a**2 * i0[0]) / h**2]
            for j in range(deg + 1):
                out[j] += amp * loc[j]
        return out

    def square_integral(self, domain, cid):
        a, h = domain.geometry(np.array([cid]))
        a, b = a[0], a[0] + h[0]
        total = 0.0
        n = len(self.amps)
        for i in range(n):
            for j in range(n):
                ci, cj = self.freqs[i], self.freqs[j]
                aij = self.amps[i] * self.amps[j]
                # sin(ci x) sin(cj x) = (cos((ci-cj)x) - cos((ci+cj)x))/2
                dm, dp = ci - cj, ci + cj
                t1 = (b - a) if abs(dm) < 1e-14 else (np.sin(dm * b) - np.sin(dm * a)) / dm
                t2 = (np.sin(dp * b) - np.sin(dp * a)) / dp
                total += aij * 0.5 * (t1 - t2)
        return float(total)


# ---------------------------------------------------------------------------
# nonlinearity and diffusion


class Nonlinearity:
    """N(u) = cubic * u^3 + linear * u, optionally shifted by a lift l(x):
    the solver's unknown is then w with u = w + l."""

    def __init__(self, cubic=0.0, linear=0.0, lift=None):
        self.cubic = float(cubic)
        self.linear = float(linear)
        self.lift = lift  # callable or None

    @property
    def is_linear(self):
        return self.cubic == 0.0

    def degree_multiplier(self):
        return 3 if self.cubic else 1

    def _total(self, w_vals, pts):
        if self.lift is None:
            return w_vals
        return w_vals + self.lift(pts)

    def value(self, w_vals, pts):
        u = self._total(w_vals, pts)
        return self.cubic * u**3 + self.linear * u

    def dvalue(self, w_vals, pts):
        u = self._total(w_vals, pts)
        return 3.0 * self.cubic * u**2 + self.linear


class Diffusion:
    """Symmetric diffusion field. Identity fast path plus constant SPD."""

    def __init__(self, matrix=None):
        self.matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        if self.matrix is not None:
            if not np.allclose(self.matrix, self.matrix.T):
                raise ConfigError("diffusion matrix must be symmetric")
            if np.any(np.linalg.eigvalsh(self.matrix) <= 0):
                raise ConfigError("diffusion matrix must be positive definite")

    @property
    def is_identity(self):
        return self.matrix is None

    def apply(self, comps):
        """A @ g for a list of value arrays per component."""
        if self.matrix is None:
            return comps
        n = len(comps)
        return [
            sum(self.matrix[q, r] * comps[r] for r in range(n)) for q in range(n)
        ]

    def coercivity_floor(self, domain, nsample=64, seed=0):
        if self.matrix is None:
            return 1.0
        return float(np.min(np.linalg.eigvalsh(self.matrix)))


# ---------------------------------------------------------------------------
# problem spec


class ProblemSpec:
    def __init__(
        self,
        domain,
        forcing,
        nonlinearity=None,
        diffusion=None,
        dirichlet=None,
        neumann=None,
        split=None,
        exact=None,
    ):
        self.domain = domain
        self.forcing = forcing
        self.nonlin = nonlinearity or Nonlinearity()
        self.diffusion = diffusion or Diffusion()
        self.dirichlet = dirichlet      # 1D: (g0, g1); 2D: callable on boundary
        self.neumann = neumann          # callable on Gamma_N or None
        if domain.dim == 2:
            self.split = split or mesh.all_dirichlet_split(domain)
        else:
            self.split = None
        self.exact = exact              # optional manufactured solution
        self._fold_lift()
        if self.diffusion.coercivity_floor(domain) <= 0:
            raise ConfigError("diffusion not coercive")

    def _fold_lift(self):
        """1D inhomogeneous Dirichlet data folds into an affine lift."""
        if self.domain.dim != 1 or not self.dirichlet:
            self.lift = None
            return
        g0, g1 = self.dirichlet
        if g0 == 0.0 and g1 == 0.0:
            self.lift = None
            return
        self.lift = (float(g0), float(g1) - float(g0))   # l(x) = g0 + slope x
        slope = self.lift[1]
        self.nonlin = Nonlinearity(
            self.nonlin.cubic, self.nonlin.linear,
            lift=lambda pts, g0=float(g0), s=slope: g0 + s * np.asarray(pts),
        )

    def lift_values(self, pts):
        if self.lift is None:
            return 0.0
        return self.lift[0] + self.lift[1] * np.asarray(pts)

    def lift_grad(self):
        return 0.0 if self.lift is None else self.lift[1]

    @property
    def has_dirichlet_block(self):
        """True when the 2D inhomogeneous trace block is active."""
        return self.domain.dim == 2 and self.dirichlet is not None

    def gamma_n_facets(self):
        if self.domain.dim == 1 or self.split is None:
            return []
        return [f for f, tag in self.split.items() if tag == "N"]


class ManufacturedSolution:
    """Exact (u, theta) pair for error measurement."""

    def __init__(self, u, grad_u):
        self.u = u
        self.grad_u = grad_u  # callable -> list of components


def manufactured_1d(name, nonlin=None):
    """Bundled 1D manufactured problems; returns (forcing, exact)."""
    n3 = nonlin.cubic if nonlin else 0.0
    n1 = nonlin.linear if nonlin else 0.0
    if name == "bubble":
        # u = x(1-x): -u'' = 2; u^3 = x^3 - 3x^4 + 3x^5 - x^6
        coeffs = np.zeros(7)
        coeffs[0] += 2.0
        if n1:
            coeffs[1] += n1
            coeffs[2] -= n1
        if n3:
            coeffs[3] += n3
            coeffs[4] -= 3 * n3
            coeffs[5] += 3 * n3
            coeffs[6] -= n3
        exact = ManufacturedSolution(
            lambda x: x * (1 - x), lambda x: [1 - 2 * np.asarray(x)]
        )
        return PolyForcing1D(coeffs), exact
    if name == "sin":
        # u = sin(pi x)/pi^2: -u'' = sin(pi x)
        if n1:
            raise ConfigError("sin manufactured solution supports cubic term only")
        amps = [1.0]
        freqs = [np.pi]
        if n3:
            # u^3 = (3 sin - sin 3.)/4 / pi^6
            amps += [3 * n3 / (4 * np.pi**6), -n3 / (4 * np.pi**6)]
            freqs += [np.pi, 3 * np.pi]
        exact = ManufacturedSolution(
            lambda x: np.sin(np.pi * x) / np.pi**2,
            lambda x: [np.cos(np.pi * np.asarray(x)) / np.pi],
        )
        return SinForcing1D(amps, freqs), exact
    raise ConfigError(f"unknown manufactured solution '{name}'")

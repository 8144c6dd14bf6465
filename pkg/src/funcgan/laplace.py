"""Weighted Laplace operator -Delta_mu on a grid density and its spectrum.

The operator is assembled from a staggered finite-volume stencil: node values
``u``, face differences ``G u`` along each axis, and face weights ``W`` built
from face-averaged densities. The stiffness ``K = G^T W G`` discretizes the
form ``<grad u, grad w>_mu``; the diagonal mass ``m`` holds the mu-weight of
each node's dual cell. Eigenproblems are solved on the symmetrized matrix
``A = m^{-1/2} K m^{-1/2}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import ConvergenceFailure, DegenerateSpectrum, ZeroVariance
from .measure import GridDensity

ZERO_MODE_TOL = 1e-8
DENSE_MAX = 2000


def _trapezoid(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def _difference(n, h):
    return sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h


@dataclass(frozen=True, eq=False)
class WeightedLaplacian:
    """Discrete -Delta_mu with its gradient/divergence pair.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix
        Symmetric ``A = m^{-1/2} K m^{-1/2}``.
    stiffness : scipy.sparse.csr_matrix
        ``K = G^T W G``.
    mass : ndarray
        Node mu-weights, summing to one.
    grad_op : scipy.sparse.csr_matrix
        Stacked face differences for all axes.
    face_weights : ndarray
        ``W``; mu-weight attached to each face.
    face_shapes : tuple
        Shape of the face array belonging to each axis.
    """

    density: GridDensity
    matrix: sparse.csr_matrix
    stiffness: sparse.csr_matrix
    mass: np.ndarray
    grad_op: sparse.csr_matrix
    face_weights: np.ndarray
    face_shapes: tuple

    @property
    def shape(self):
        return self.density.shape

    @property
    def size(self):
        return self.density.size

    @property
    def n_faces(self):
        return self.face_weights.size

    @property
    def kernel_vector(self):
        """Unit null vector of ``matrix`` (the constant mode, symmetrized)."""
        return np.sqrt(self.mass)

    def norm_estimate(self):
        return float(abs(self.matrix).sum(axis=1).max())

    def gradient(self, u):
        return self.grad_op @ np.ravel(u)

    def divergence(self, v):
        """Discrete ``rho^{-1} div(rho v)`` for a face field ``v``."""
        return -(self.grad_op.T @ (self.face_weights * v)) / self.mass

    def apply(self, u):
        """``-Delta_mu u`` at the nodes."""
        return (self.stiffness @ np.ravel(u)) / self.mass

    def inner(self, u, w):
        return float(np.dot(self.mass * np.ravel(u), np.ravel(w)))

    def norm(self, u):
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def mean(self, u):
        return float(np.dot(self.mass, np.ravel(u)))

    def face_inner(self, v, w):
        return float(np.dot(self.face_weights * v, w))

    def face_norm(self, v):
        return float(np.sqrt(max(self.face_inner(v, v), 0.0)))

    def split_faces(self, v):
        out, start = [], 0
        for shp in self.face_shapes:
            n = int(np.prod(shp))
            out.append(v[start:start + n].reshape(shp))
            start += n
        return out

    def join_faces(self, parts):
        return np.concatenate([np.ravel(p) for p in parts])


def assemble(density: GridDensity) -> WeightedLaplacian:
    """Finite-volume -Delta_mu with zero weighted flux on the box boundary."""
    shape, h = density.shape, density.spacing
    d = len(shape)
    tw = [_trapezoid(n) for n in shape]
    vol = np.prod(h) * tw[0]
    for a in range(1, d):
        vol = np.multiply.outer(vol, tw[a])
    rho = density.rho / float((density.rho * vol).sum())
    mass = (rho * vol).ravel()

    blocks, weights, face_shapes = [], [], []
    for a in range(d):
        ops = [sparse.identity(n, format="csr") for n in shape]
        ops[a] = _difference(shape[a], h[a])
        g = ops[0]
        for op in ops[1:]:
            g = sparse.kron(g, op, format="csr")
        blocks.append(g)
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[a], hi[a] = slice(0, -1), slice(1, None)
        rho_face = 0.5 * (rho[tuple(lo)] + rho[tuple(hi)])
        transverse = np.ones(rho_face.shape) * h[a]
        for b in range(d):
            if b != a:
                bshape = [1] * d
                bshape[b] = shape[b]
                transverse = transverse * (h[b] * tw[b]).reshape(bshape)
        weights.append((rho_face * transverse).ravel())
        face_shapes.append(rho_face.shape)

    grad_op = sparse.vstack(blocks, format="csr")
    face_weights = np.concatenate(weights)
    stiffness = (grad_op.T @ sparse.diags(face_weights) @ grad_op).tocsr()
    s = sparse.diags(1.0 / np.sqrt(mass))
    matrix = (s @ stiffness @ s).tocsr()
    matrix = ((matrix + matrix.T) * 0.5).tocsr()
    for arr in (mass, face_weights):
        arr.flags.writeable = False
    return WeightedLaplacian(density=density, matrix=matrix, stiffness=stiffness, mass=mass,
                             grad_op=grad_op, face_weights=face_weights,
                             face_shapes=tuple(face_shapes))


@dataclass(frozen=True, eq=False)
class LaplaceSpectrum:
    """Ascending eigenpairs of -Delta_mu; eigenfunctions are mu-orthonormal columns."""

    xis: np.ndarray
    eigenfunctions: np.ndarray
    residuals: np.ndarray
    method: str
    grid_shape: tuple

    @property
    def k(self):
        return len(self.xis)

    @property
    def xi_min(self):
        return float(self.xis[1]) if self.k > 1 else float("nan")

    def mode(self, i):
        """Eigenfunction ``i`` reshaped onto the grid."""
        return self.eigenfunctions[:, i].reshape(self.grid_shape)

    def summary(self):
        return {"xi_min": self.xi_min, "k": self.k,
                "residuals": [float(r) for r in self.residuals], "method": self.method}


def _fix_signs(y, mass, shape):
    """Deterministic sign: positive moment against the grid index."""
    t = np.linspace(-1.0, 1.0, y.shape[0])
    for j in range(y.shape[1]):
        col = y[:, j]
        for probe in (t, t ** 2 - np.mean(t ** 2), t ** 3):
            s = float(np.dot(probe, col))
            if abs(s) > 1e-8 * np.abs(col).sum():
                if s < 0:
                    y[:, j] = -col
                break
    return y


def dense_eigenpairs(op: WeightedLaplacian, k: int):
    """LAPACK oracle on the symmetrized matrix (tridiagonal QL path in 1-D)."""
    a = op.matrix
    if len(op.shape) == 1:
        diag = a.diagonal()
        off = a.diagonal(1)
        vals, vecs = sla.eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    else:
        vals, vecs = sla.eigh(a.toarray(), subset_by_index=[0, k - 1])
    return vals, vecs


def lanczos_eigenpairs(op: WeightedLaplacian, nev: int, *, tol=1e-10, max_iter=None,
                       shift=None, seed=0, check_every=5):
    """Smallest nonzero eigenpairs by shift-invert Lanczos with full reorthogonalization.

    The known kernel vector is deflated explicitly, so the returned ``nev``
    pairs are the lowest eigenpairs on its orthogonal complement.
    """
    a = op.matrix
    n = a.shape[0]
    q0 = op.kernel_vector
    anorm = op.norm_estimate()
    if nev <= 0:
        return np.zeros(0), np.zeros((n, 0)), 0
    if shift is None:
        shift = -1e-6 * anorm
    if max_iter is None:
        max_iter = int(np.ceil(10 * (nev + 1) * np.sqrt(n)))
    m_max = min(n - 1, max(max_iter, nev))
    lu = splu((a - shift * sparse.identity(n, format="csr")).tocsc())
    rng = np.random.default_rng(seed)

    def fresh(basis):
        v = rng.standard_normal(n)
        for _ in range(2):
            v -= q0 * (q0 @ v)
            if basis.shape[1]:
                v -= basis @ (basis.T @ v)
        return v / np.linalg.norm(v)

    Q = np.zeros((n, m_max))
    alphas, betas = [], []
    v = fresh(Q[:, :0])
    best_res = np.inf
    for j in range(m_max):
        Q[:, j] = v
        w = lu.solve(v)
        alpha = float(v @ w)
        for _ in range(2):
            w -= q0 * (q0 @ w)
            w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        m = j + 1
        done = m == m_max
        if m >= nev and (m % check_every == 0 or done or beta < 1e-12 * abs(alpha)):
            if m == 1:
                theta, s = np.array(alphas), np.ones((1, 1))
            else:
                theta, s = sla.eigh_tridiagonal(np.array(alphas), np.array(betas))
            top = np.argsort(theta)[::-1][:nev]
            y = Q[:, :m] @ s[:, top]
            y /= np.linalg.norm(y, axis=0)
            xi = np.einsum("ij,ij->j", y, a @ y)
            res = np.linalg.norm(a @ y - y * xi, axis=0)
            best_res = min(best_res, float(res.max()))
            if np.all(res <= tol * anorm):
                order = np.argsort(xi)
                return xi[order], y[:, order], m
        if done:
            break
        if beta < 1e-12 * max(abs(alpha), 1.0):
            betas.append(0.0)
            v = fresh(Q[:, :m])
        else:
            betas.append(beta)
            v = w / beta
    raise ConvergenceFailure(len(alphas), best_res / max(anorm, 1e-300))


def spectrum(op: WeightedLaplacian, k: int, method: str = "auto", **lanczos_kw) -> LaplaceSpectrum:
    """The ``k`` smallest eigenpairs of -Delta_mu, zero mode first.

    ``method`` is ``"dense"`` (LAPACK oracle), ``"lanczos"`` or ``"auto"``
    (dense up to 2000 unknowns).
    """
    n = op.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if method == "auto":
        method = "dense" if n <= DENSE_MAX else "lanczos"
    q0 = op.kernel_vector
    if method == "dense":
        vals, vecs = dense_eigenpairs(op, k)
        drop = int(np.argmax(np.abs(q0 @ vecs)))
        keep = [i for i in range(k) if i != drop]
        vals, vecs = vals[keep], vecs[:, keep]
        vecs = vecs - np.outer(q0, q0 @ vecs)
        vecs /= np.linalg.norm(vecs, axis=0) if vecs.shape[1] else 1.0
    elif method == "lanczos":
        vals, vecs, _ = lanczos_eigenpairs(op, k - 1, **lanczos_kw)
    else:
        raise ValueError(f"unknown eigensolver {method!r}")

    zero = float(q0 @ (op.matrix @ q0))
    y = np.column_stack([q0, vecs]) if vecs.size else q0[:, None]
    xis = np.concatenate([[zero], vals])
    residuals = np.linalg.norm(op.matrix @ y - y * xis, axis=0)
    y = _fix_signs(y, op.mass, op.shape)
    w = y / np.sqrt(op.mass)[:, None]
    w[:, 0] = 1.0
    return LaplaceSpectrum(xis=xis, eigenfunctions=w, residuals=residuals, method=method,
                           grid_shape=op.shape)


def poincare_constant(op: WeightedLaplacian, method: str = "auto") -> float:
    """Smallest nonzero eigenvalue xi_min of -Delta_mu."""
    xi = spectrum(op, min(2, op.size), method=method).xis
    if len(xi) < 2 or xi[1] <= ZERO_MODE_TOL:
        raise DegenerateSpectrum(f"second eigenvalue {xi[-1]:.3e} is not above {ZERO_MODE_TOL}")
    return float(xi[1])


def rayleigh_quotient(op: WeightedLaplacian, w) -> float:
    """``<grad w, grad w>_mu / Var_mu(w)``; bounded below by xi_min."""
    w = np.ravel(np.asarray(w, dtype=float))
    wc = w - op.mean(w)
    var = op.inner(wc, wc)
    scale = op.inner(w, w)
    if var <= 1e-24 * max(scale, 1e-300) or var == 0.0:
        raise ZeroVariance("function is mu-almost everywhere constant")
    return float(wc @ (op.stiffness @ wc)) / var

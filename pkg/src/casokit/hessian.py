"""Closed-form input Hessian of the cross-entropy loss.

For a locally linear network with logits W^T x + b the loss Hessian in
input space is

    H = W A W^T,        A = diag(p) - p p^T,

where p are the class probabilities. A is positive semidefinite with rows
summing to zero, so H never needs to be materialized: factoring A = L L^T
gives H = B B^T with B = W L, and every spectral quantity of H can be read
off the small Gram matrix B^T B (at most c x c).

In the high-confidence regime p = [1-(c-1)eps, eps, ..., eps] the Hessian
collapses toward the rank-one surrogate g g^T / (eps (c-1)) with g the loss
gradient; rank_one_approx/rel_error quantify that collapse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, KinkWarning
from .netcore import forward, input_gradient

# absolute floor under which an eigenvalue of A counts as zero
CURVATURE_EIG_FLOOR = 1e-12
# A eigenvalue below this signals a corrupted probability vector
CURVATURE_EIG_NEGATIVE = -1e-8
# relative floor for retained eigenvalues of H
HESSIAN_EIG_FLOOR = 1e-10
# pre-activation magnitude treated as kink contact inside an FD stencil
STENCIL_KINK_EPS = 1e-12


@dataclass(frozen=True)
class SoftmaxCurvature:
    """The c x c softmax curvature A = diag(p) - p p^T for probabilities p."""

    p: np.ndarray
    matrix: np.ndarray


def softmax_curvature(p):
    """Build A = diag(p) - p p^T after validating p as a probability vector."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise DimensionError("p must be a probability vector over >= 2 classes")
    if not np.isfinite(p).all() or p.min() < 0.0:
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    A = np.diag(p) - np.outer(p, p)
    return SoftmaxCurvature(p=p, matrix=A)


def factor_curvature(curv):
    """Factor A = L L^T via a symmetric eigendecomposition.

    Negative eigenvalues within rounding of zero are clamped; anything
    below CURVATURE_EIG_NEGATIVE raises. Columns whose eigenvalue falls
    under CURVATURE_EIG_FLOOR are dropped, so L has shape (c, r) with
    r = rank(A) (c-1 for strictly positive p).
    """
    A = curv.matrix
    w, V = np.linalg.eigh(A)
    if float(w.min()) < CURVATURE_EIG_NEGATIVE:
        raise ValueError(
            f"curvature matrix has eigenvalue {w.min():.3e}; probabilities corrupted"
        )
    w = np.maximum(w, 0.0)
    keep = w > CURVATURE_EIG_FLOOR
    # descending order so the dominant directions come first
    idx = np.argsort(w[keep])[::-1]
    wk = w[keep][idx]
    Vk = V[:, keep][:, idx]
    return Vk * np.sqrt(wk)


@dataclass(frozen=True)
class HessianHandle:
    """Factored spectral view of H = W A W^T.

    B = W L satisfies H = B B^T. eigenvalues holds the retained
    eigenvalues of H in descending order (everything above
    HESSIAN_EIG_FLOOR times the largest); eigenvectors is the matching
    orthonormal (d, m) block. hvp applies H exactly through B, which keeps
    directions the floor dropped.
    """

    W: np.ndarray
    factor: np.ndarray
    B: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self):
        return self.W.shape[0]

    @property
    def top_eigenvalue(self):
        return float(self.eigenvalues[0]) if self.eigenvalues.size else 0.0

    def hvp(self, v):
        return self.B @ (self.B.T @ v)


def hessian_eig(W, p):
    """Eigendecompose H = W A W^T without forming any d x d matrix.

    Forms B = W L_A, builds the Gram matrix C = B^T B (at most c x c),
    eigendecomposes C, and recovers input-space eigenvectors as
    U = B V / sigma. Eigenvalues under HESSIAN_EIG_FLOOR relative to the
    largest are dropped.
    """
    W = np.asarray(W, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if W.ndim != 2:
        raise DimensionError("W must be (d, c)")
    if W.shape[1] != p.shape[0]:
        raise DimensionError(
            f"W has {W.shape[1]} columns but p has {p.shape[0]} entries"
        )
    L = factor_curvature(softmax_curvature(p))
    B = W @ L
    d = W.shape[0]
    if L.shape[1] == 0:
        return HessianHandle(
            W=W,
            factor=L,
            B=B,
            eigenvalues=np.empty(0),
            eigenvectors=np.empty((d, 0)),
        )
    C = B.T @ B
    w, V = np.linalg.eigh(C)
    w = np.maximum(w, 0.0)
    top = float(w.max())
    if top <= 0.0:
        return HessianHandle(
            W=W,
            factor=L,
            B=B,
            eigenvalues=np.empty(0),
            eigenvectors=np.empty((d, 0)),
        )
    keep = w > HESSIAN_EIG_FLOOR * top
    idx = np.argsort(w[keep])[::-1]
    wk = w[keep][idx]
    U = (B @ V[:, keep][:, idx]) / np.sqrt(wk)
    return HessianHandle(W=W, factor=L, B=B, eigenvalues=wk, eigenvectors=U)


def hvp_closed_form(W, p, v):
    """Apply H = W A W^T to v in O(dc) without forming A or H."""
    W = np.asarray(W, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != W.shape[0]:
        raise DimensionError("v length does not match W rows")
    u = W.T @ v
    Au = p * u - p * (p @ u)
    return W @ Au


def hvp_finite_diff(net, x, y, v):
    """Hessian-vector product by central differences of the exact gradient.

    Uses the displacement r = 1e-4 (1 + ||x||) along v/||v||, then rescales
    by ||v||. Emits KinkWarning when a relu pre-activation changes sign (or
    hugs zero) anywhere inside the stencil, since the product is then a
    difference of gradients from different linear cells.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    vn = float(np.linalg.norm(v))
    if vn < 1e-300:
        raise ValueError("direction vector is numerically zero")
    vhat = v / vn
    r = 1e-4 * (1.0 + float(np.linalg.norm(x)))
    xp = x + r * vhat
    xm = x - r * vhat

    relu_layers = [
        i for i, l in enumerate(net.spec.layers) if l.activation == "relu"
    ]
    if relu_layers:
        tp = forward(net, xp)
        tm = forward(net, xm)
        for i in relu_layers:
            zp = tp.pre_activations[i]
            zm = tm.pre_activations[i]
            crossed = (zp > 0.0) != (zm > 0.0)
            hugging = np.minimum(np.abs(zp), np.abs(zm)) <= STENCIL_KINK_EPS
            if bool(np.any(crossed | hugging)):
                warnings.warn(
                    "finite-difference stencil straddles a relu kink",
                    KinkWarning,
                    stacklevel=2,
                )
                break
    gp = input_gradient(net, xp, y)
    gm = input_gradient(net, xm, y)
    return (gp - gm) * (vn / (2.0 * r))


def largest_eigenvalue(hvp, dim, iters=10, tol=1e-6, seed=0):
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Starts from a seeded random unit vector, returns the Rayleigh quotient
    after `iters` steps or earlier when its relative change drops under
    tol. A zero operator returns exactly 0.0. For factored Hessians the
    same number is available exactly from hessian_eig.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    have_prev = False
    for _ in range(iters):
        w = hvp(v)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        new_lam = float(v @ w)
        v = w / nw
        if have_prev and abs(new_lam - lam) <= tol * max(abs(new_lam), 1e-300):
            return new_lam
        lam = new_lam
        have_prev = True
    return lam


@dataclass(frozen=True)
class RankOneApprox:
    """The surrogate H ~= mu q q^T with q = g/||g|| and
    mu = ||g||^2 / (eps (c-1)), valid in the high-confidence regime."""

    gradient: np.ndarray
    eps: float
    classes: int
    eigenvalue: float


def rank_one_approx(g, eps, classes):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise DimensionError("g must be a flat vector")
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    mu = float(g @ g) / (eps * (classes - 1))
    return RankOneApprox(gradient=g, eps=float(eps), classes=int(classes), eigenvalue=mu)


def rel_error(handle, approx):
    """Frobenius error ||H - ghat||_F / ||H||_F of the rank-one surrogate.

    Both H = B B^T and the surrogate live in the span of B's columns plus
    the gradient direction, so the difference is measured inside that
    <= c dimensional subspace; no d x d matrix is ever formed. Raises when
    ||H||_F = 0.
    """
    B = handle.B
    g = approx.gradient
    if g.shape[0] != handle.dim:
        raise DimensionError("gradient length does not match the Hessian")
    gn = float(np.linalg.norm(g))
    if gn > 0.0:
        M = np.concatenate([B, (g / gn)[:, None]], axis=1)
    else:
        M = B
    Q, _ = np.linalg.qr(M)
    P = Q.T @ B
    H_small = P @ P.T
    h_norm = float(np.linalg.norm(H_small))
    if h_norm == 0.0:
        raise ValueError("Hessian has zero Frobenius norm")
    if gn > 0.0:
        u = Q.T @ (g / gn)
        diff = H_small - approx.eigenvalue * np.outer(u, u)
    else:
        diff = H_small
    return float(np.linalg.norm(diff)) / h_norm

"""Validation studies for the rank-one collapse and the sparse oracle.

Three empirical studies back the theory at desk scale:

* simulate_rank_one measures how fast H = W A W^T approaches the
  rank-one surrogate g g^T / (eps (c-1)) as confidence or class count
  grows, on random linear models.
* confidence_gap_study compares the normalized curvature-aware and
  curvature-free maps on a trained classifier; the gap shrinks with
  prediction confidence.
* alignment_curve tracks the cosine between the gradient and the top
  Hessian eigenvector, plus how much spectral mass that eigenvector
  carries (largest eigenvalue squared over the sum of squares).

brute_force_group_feature is the exact L0 oracle: it enumerates every
support of size at most k and maximizes the lam1-free surrogate on each,
which is what the L1 path is meant to approximate.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, DimensionError
from .hessian import hessian_eig, rank_one_approx, rel_error
from .netcore import forward, input_gradient, local_linearization
from .solver import (
    DEFAULT_C1,
    ObjectiveSpec,
    SolverConfig,
    closed_form_cafo,
    closed_form_caso,
    fista_solve,
    select_lambda2,
)

log = logging.getLogger(__name__)

SIM_MODES = ("vary-classes", "vary-eps", "grid")


@dataclass(frozen=True)
class RankOneSimConfig:
    """Grid for the rank-one error simulation.

    mode 'vary-classes' fixes p0 and sweeps the class counts; 'vary-eps'
    fixes a class count c and sweeps the runner-up probability eps;
    'grid' crosses both lists. p0 and eps are linked by
    p0 = 1 - (c-1) eps, and supplying an inconsistent pair is an error.
    """

    mode: str
    d: int = 512
    seed: int = 0
    p0: float | None = None
    classes: tuple[int, ...] = ()
    eps_values: tuple[float, ...] = ()
    c: int | None = None

    def __post_init__(self):
        if self.mode not in SIM_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        object.__setattr__(self, "classes", tuple(int(v) for v in self.classes))
        object.__setattr__(
            self, "eps_values", tuple(float(v) for v in self.eps_values)
        )


@dataclass(frozen=True)
class RankOnePoint:
    c: int
    eps: float
    rel_error: float


def _check_point(c, eps, p0=None):
    if c < 2:
        raise ValueError("need at least 2 classes")
    if not 0.0 < eps < 1.0 / c:
        raise ValueError(
            f"eps = {eps} must lie in (0, 1/c) for c = {c} so that p0 > 1/c"
        )
    if p0 is not None:
        implied = 1.0 - (c - 1) * eps
        if abs(implied - p0) > 1e-12 * max(1.0, abs(p0)):
            raise ValueError(
                f"inconsistent confidence: p0 = {p0} but 1 - (c-1) eps = {implied}"
            )


def _confident_p(c, eps):
    p = np.full(c, eps)
    p[0] = 1.0 - (c - 1) * eps
    return p


def _sim_point(W, c, eps):
    p = _confident_p(c, eps)
    y = np.zeros(c)
    y[0] = 1.0
    g = W @ (p - y)
    handle = hessian_eig(W, p)
    approx = rank_one_approx(g, eps, c)
    return RankOnePoint(c=c, eps=eps, rel_error=rel_error(handle, approx))


def simulate_rank_one(cfg):
    """Rank-one surrogate error over the configured (c, eps) grid.

    Weights are standard normal, drawn from one child seed per class
    count so that sweeping eps at fixed c reuses the same W and yields a
    smooth curve. Returns one RankOnePoint per grid entry.
    """
    ss = np.random.SeedSequence(cfg.seed)
    points = []
    if cfg.mode == "vary-classes":
        if cfg.p0 is None:
            raise ValueError("vary-classes mode needs p0")
        if not cfg.classes:
            raise ValueError("vary-classes mode needs a class list")
        children = ss.spawn(len(cfg.classes))
        for c, child in zip(cfg.classes, children):
            eps = (1.0 - cfg.p0) / (c - 1)
            _check_point(c, eps, cfg.p0)
            rng = np.random.default_rng(child)
            W = rng.standard_normal((cfg.d, c))
            rng.standard_normal(c)  # bias slot of the random model, unused
            points.append(_sim_point(W, c, eps))
        return points
    if cfg.mode == "vary-eps":
        if cfg.c is None:
            raise ValueError("vary-eps mode needs c")
        if not cfg.eps_values:
            raise ValueError("vary-eps mode needs an eps list")
        for eps in cfg.eps_values:
            _check_point(cfg.c, eps)
        rng = np.random.default_rng(ss)
        W = rng.standard_normal((cfg.d, cfg.c))
        rng.standard_normal(cfg.c)
        for eps in cfg.eps_values:
            points.append(_sim_point(W, cfg.c, eps))
        return points
    # grid
    if not cfg.classes or not cfg.eps_values:
        raise ValueError("grid mode needs class and eps lists")
    for c in cfg.classes:
        for eps in cfg.eps_values:
            _check_point(c, eps)
    children = ss.spawn(len(cfg.classes))
    for c, child in zip(cfg.classes, children):
        rng = np.random.default_rng(child)
        W = rng.standard_normal((cfg.d, c))
        rng.standard_normal(c)
        for eps in cfg.eps_values:
            points.append(_sim_point(W, c, eps))
    return points


@dataclass(frozen=True)
class GapPoint:
    sample_id: int
    p_max: float
    gap: float


def confidence_gap_study(net, dataset, n_samples, c1=DEFAULT_C1):
    """Normalized distance between the curvature-aware and curvature-free
    maps at lam1 = 0 across dataset samples.

    Both maps come from their closed forms on the local linearization,
    are normalized to unit L2, and the gap is the norm of their
    difference (in [0, 2]). Samples with an exactly zero gradient carry
    no direction to compare and are skipped with a log entry.
    """
    rows = []
    count = min(int(n_samples), dataset.n)
    for i in range(count):
        x = dataset.X[i]
        y = int(dataset.labels[i])
        trace = forward(net, x, y)
        g = input_gradient(net, x, y)
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            log.info("sample %d has zero gradient; skipped", i)
            continue
        lin = local_linearization(net, x)
        handle = hessian_eig(lin.W, trace.probs)
        d_caso = closed_form_caso(g, handle, select_lambda2(handle.top_eigenvalue, c1))
        d_cafo = closed_form_cafo(g, select_lambda2(0.0, c1))
        u = d_caso / np.linalg.norm(d_caso)
        v = d_cafo / np.linalg.norm(d_cafo)
        rows.append(
            GapPoint(sample_id=i, p_max=float(trace.probs.max()), gap=float(np.linalg.norm(u - v)))
        )
    return rows


@dataclass(frozen=True)
class AlignmentPoint:
    c: int
    cosine: float
    mass_ratio: float


def alignment_curve(d, classes, eps, seed=0):
    """Gradient alignment and spectral concentration across class counts.

    For each c: random W, confident p = [1-(c-1)eps, eps, ...], gradient
    g = W (p - y). cosine is |cos(u1, g)| for the top eigenvector u1 and
    mass_ratio is lambda_max^2 over the sum of squared eigenvalues, the
    Frobenius share of the top eigenpair.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    classes = tuple(int(c) for c in classes)
    for c in classes:
        _check_point(c, eps)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(len(classes))
    points = []
    for c, child in zip(classes, children):
        rng = np.random.default_rng(child)
        W = rng.standard_normal((d, c))
        rng.standard_normal(c)
        p = _confident_p(c, eps)
        y = np.zeros(c)
        y[0] = 1.0
        g = W @ (p - y)
        handle = hessian_eig(W, p)
        u1 = handle.eigenvectors[:, 0]
        cosine = float(abs(u1 @ g) / np.linalg.norm(g))
        lams = handle.eigenvalues
        mass = float(lams[0] ** 2 / np.sum(lams**2))
        points.append(AlignmentPoint(c=c, cosine=cosine, mass_ratio=mass))
    return points


@dataclass(frozen=True)
class OracleConfig:
    """Budget for the exhaustive group-feature search.

    k is the maximum support size; the total number of supports
    sum_{j<=k} C(d, j) must stay within max_enumerations.
    """

    k: int
    max_enumerations: int = 100_000

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.max_enumerations < 1:
            raise ValueError("max_enumerations must be positive")


@dataclass(frozen=True)
class OracleResult:
    support: tuple[int, ...]
    delta: np.ndarray
    value: float


def brute_force_group_feature(g, H, lam2, cfg):
    """Exact L0 oracle for the lam1-free surrogate.

    Enumerates every support S with |S| <= k and maximizes
    g^T D + 1/2 D^T H D - lam2 ||D||^2 over vectors supported on S, which
    solves the |S| x |S| system (2 lam2 I - H)_SS D_S = g_S. Requires a
    dense H with d <= 14 and lam2 > lambda_max(H)/2.
    """
    g = np.asarray(g, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    d = g.shape[0]
    if H.shape != (d, d):
        raise DimensionError("H must be a square d x d matrix matching g")
    if d > 14:
        raise ValueError(f"d = {d} exceeds the d <= 14 enumeration limit")
    top = float(np.linalg.eigvalsh(H)[-1])
    if lam2 <= top / 2.0:
        raise ValueError("lam2 must exceed half the largest eigenvalue of H")
    k = min(cfg.k, d)
    total = sum(math.comb(d, j) for j in range(k + 1))
    if total > cfg.max_enumerations:
        raise BudgetError(
            f"{total} supports exceed the budget of {cfg.max_enumerations}"
        )

    M = 2.0 * lam2 * np.eye(d) - H
    best_value = 0.0
    best_support = ()
    best_delta = np.zeros(d)
    for size in range(1, k + 1):
        for support in itertools.combinations(range(d), size):
            idx = np.asarray(support)
            gs = g[idx]
            ds = np.linalg.solve(M[np.ix_(idx, idx)], gs)
            value = float(gs @ ds + 0.5 * (ds @ (H[np.ix_(idx, idx)] @ ds)) - lam2 * (ds @ ds))
            if value > best_value:
                best_value = value
                best_support = support
                best_delta = np.zeros(d)
                best_delta[idx] = ds
    return OracleResult(support=best_support, delta=best_delta, value=best_value)


def make_planted_instance(d=12, support=(2, 5, 9), seed=0):
    """A sparse test problem: g supported on a few coordinates, H
    diagonally dominant PSD, lam2 from the usual ridge rule.

    Returns (g, H, lam2, support). The oracle with k = |support| recovers
    exactly the planted support, and so does the L1 path at suitable lam1.
    """
    rng = np.random.default_rng(seed)
    g = np.zeros(d)
    signs = np.where(rng.random(len(support)) < 0.5, -1.0, 1.0)
    mags = rng.uniform(0.6, 1.0, len(support))
    g[list(support)] = signs * mags
    diag = rng.uniform(0.5, 1.5, d)
    off = rng.standard_normal((d, d)) * 0.02
    off = (off + off.T) / 2.0
    np.fill_diagonal(off, 0.0)
    # rescale the coupling so diagonal dominance (hence PSD) is guaranteed
    worst = float(np.abs(off).sum(axis=1).max())
    limit = 0.5 * float(diag.min())
    if worst > limit:
        off *= limit / worst
    H = np.diag(diag) + off
    lam2 = select_lambda2(float(np.linalg.eigvalsh(H)[-1]))
    return g, H, lam2, tuple(sorted(support))


def l1_path_supports(g, H, lam2, grid, iterations=100):
    """Support of the FISTA solution at each lam1 on the grid.

    Uses a dense H (matching the oracle's setting) and enough iterations
    for the supports to stabilize. Returns a list of index tuples.
    """
    g = np.asarray(g, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    top = float(np.linalg.eigvalsh(H)[-1])
    cfg = SolverConfig(iterations=int(iterations))
    supports = []
    for lam1 in grid:
        obj = ObjectiveSpec(
            gradient=g,
            hvp=lambda v: H @ v,
            lam1=float(lam1),
            lam2=float(lam2),
            curvature_bound=top,
        )
        res = fista_solve(obj, cfg)
        supports.append(tuple(np.flatnonzero(res.delta != 0.0)))
    return supports


def _rankdata(v):
    """Ranks starting at 1 with ties sharing their average rank."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    sv = v[order]
    while i < len(v):
        j = i
        while j < len(v) and sv[j] == sv[i]:
            j += 1
        ranks[order[i:j]] = (i + j - 1) / 2.0 + 1.0
        i = j
    return ranks


def spearman_rho(a, b):
    """Spearman rank correlation (average ranks for ties)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("inputs must be equal-length vectors")
    if len(a) < 2:
        raise ValueError("need at least two observations")
    ra = _rankdata(a)
    rb = _rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = float(np.linalg.norm(ra) * np.linalg.norm(rb))
    if denom == 0.0:
        raise ValueError("constant input has no rank correlation")
    return float(ra @ rb / denom)

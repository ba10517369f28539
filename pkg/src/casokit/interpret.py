"""Saliency interpretation methods.

CAFO keeps only the first-order term of the loss around the input and
CASO adds the closed-form second-order term; both maximize the sparse
strongly concave surrogate from the solver module. Smooth variants
average the gradient and Hessian over seeded Gaussian input noise before
solving. The gradient baselines (vanilla gradient, SmoothGrad, integrated
gradients) are included for comparison; note the deliberate asymmetry
that integrated gradients accumulates the loss gradient while the vanilla
gradient differentiates the predicted class score.

A saliency map Delta is summarized by its sparsity eta, the fraction of
pixels whose channels are all exactly zero; the prox step produces exact
zeros so this is well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError
from .hessian import hessian_eig, hvp_closed_form, hvp_finite_diff, largest_eigenvalue
from .netcore import (
    Sample,
    forward,
    input_gradient,
    local_linearization,
    logit_gradient,
)
from .solver import (
    DEFAULT_C1,
    ObjectiveSpec,
    SolveResult,
    SolverConfig,
    fista_solve,
    select_lambda2,
)

# lam1 grid used when a sweep does not specify one
DEFAULT_LAMBDA1_GRID = (0.0, 1e-5, 1e-4, 1e-3, 6.25e-3, 1.25e-2, 2.5e-2, 5e-2)
DEFAULT_SMOOTH_N = 50
DEFAULT_SMOOTH_SIGMA = 0.15
DEFAULT_IG_STEPS = 50
DEFAULT_POWER_ITERS = 10

METHODS = (
    "grad",
    "smoothgrad",
    "integrated-gradients",
    "cafo",
    "caso",
    "smooth-cafo",
    "smooth-caso",
)


@dataclass(frozen=True)
class SaliencyResult:
    """One saliency map plus its bookkeeping.

    loss_gain is the surrogate objective value at delta and
    raw_loss_delta the actual network loss change at x + delta; both are
    None for the gradient baselines, which optimize nothing. lam1/lam2
    are None for the same reason. solve keeps the full solver trace when
    a solver ran.
    """

    method: str
    delta: np.ndarray
    eta: float
    p_max: float
    loss_gain: float | None = None
    raw_loss_delta: float | None = None
    lam1: float | None = None
    lam2: float | None = None
    solve: SolveResult | None = None


def sparsity_ratio(delta, channels_per_pixel=1):
    """Fraction of pixels whose channels are all exactly 0.0.

    The flat vector is viewed as pixel-major blocks of channels_per_pixel
    consecutive entries, so d must be divisible by channels_per_pixel.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if channels_per_pixel < 1:
        raise ValueError("channels_per_pixel must be >= 1")
    if delta.size % channels_per_pixel != 0:
        raise DimensionError(
            f"vector of size {delta.size} is not divisible into "
            f"{channels_per_pixel}-channel pixels"
        )
    pix = delta.reshape(-1, channels_per_pixel)
    return float(np.all(pix == 0.0, axis=1).mean())


def _finish(method, net, sample, trace, res, lam1, lam2, channels):
    x_new = sample.x + res.delta
    raw = float(forward(net, x_new, sample.y).loss - trace.loss)
    return SaliencyResult(
        method=method,
        delta=res.delta,
        eta=sparsity_ratio(res.delta, channels),
        p_max=float(trace.probs.max()),
        loss_gain=res.objective_value,
        raw_loss_delta=raw,
        lam1=float(lam1),
        lam2=float(lam2),
        solve=res,
    )


def cafo(sample, net, lam1=0.0, c1=DEFAULT_C1, channels=1, solver_config=None):
    """Curvature-free interpretation: first-order term only (H = 0).

    The ridge rule lam2 = L/2 + c1 is applied with L = 0, so lam2 = c1.
    """
    trace = forward(net, sample.x, sample.y)
    g = input_gradient(net, sample.x, sample.y)
    lam2 = select_lambda2(0.0, c1)
    obj = ObjectiveSpec(gradient=g, hvp=None, lam1=lam1, lam2=lam2)
    res = fista_solve(obj, solver_config)
    return _finish("cafo", net, sample, trace, res, lam1, lam2, channels)


def caso(
    sample,
    net,
    lam1=0.0,
    c1=DEFAULT_C1,
    power_iters=DEFAULT_POWER_ITERS,
    seed=0,
    channels=1,
    solver_config=None,
):
    """Curvature-aware interpretation using the closed-form Hessian.

    Piecewise-linear networks get the exact product H v = W A W^T v from
    the local linearization; anything else falls back to finite
    differences of the exact gradient. The curvature bound L comes from
    seeded power iteration and sets lam2 = L/2 + c1. Estimates below zero
    (possible for the non-piecewise-linear fallback) are clamped to 0.
    """
    trace = forward(net, sample.x, sample.y)
    g = input_gradient(net, sample.x, sample.y)
    if net.spec.piecewise_linear:
        lin = local_linearization(net, sample.x)
        Wl, p = lin.W, trace.probs

        def hvp(v):
            return hvp_closed_form(Wl, p, v)

    else:

        def hvp(v):
            return hvp_finite_diff(net, sample.x, sample.y, v)

    L = max(largest_eigenvalue(hvp, net.input_dim, iters=power_iters, seed=seed), 0.0)
    lam2 = select_lambda2(L, c1)
    obj = ObjectiveSpec(gradient=g, hvp=hvp, lam1=lam1, lam2=lam2, curvature_bound=L)
    res = fista_solve(obj, solver_config)
    return _finish("caso", net, sample, trace, res, lam1, lam2, channels)


def _noise_inputs(x, n, sigma, rng):
    """n noisy copies of x with noise scale sigma * (max(x) - min(x))."""
    span = float(x.max() - x.min())
    return x + (sigma * span) * rng.standard_normal((n, x.shape[0]))


def smooth_cafo(
    sample,
    net,
    lam1=0.0,
    n=DEFAULT_SMOOTH_N,
    sigma=DEFAULT_SMOOTH_SIGMA,
    seed=0,
    c1=DEFAULT_C1,
    channels=1,
    solver_config=None,
):
    """CAFO with the gradient averaged over n seeded Gaussian perturbations.

    sigma is a fraction of the input's dynamic range. The noise is drawn
    once up front and reused for the whole solve; sigma = 0 reduces to
    plain cafo exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return replace(
            cafo(sample, net, lam1, c1=c1, channels=channels, solver_config=solver_config),
            method="smooth-cafo",
        )
    trace = forward(net, sample.x, sample.y)
    rng = np.random.default_rng(seed)
    Z = _noise_inputs(sample.x, n, sigma, rng)
    acc = np.zeros(net.input_dim)
    for i in range(n):
        acc += input_gradient(net, Z[i], sample.y)
    g = acc / n
    lam2 = select_lambda2(0.0, c1)
    obj = ObjectiveSpec(gradient=g, hvp=None, lam1=lam1, lam2=lam2)
    res = fista_solve(obj, solver_config)
    return _finish("smooth-cafo", net, sample, trace, res, lam1, lam2, channels)


def smooth_caso(
    sample,
    net,
    lam1=0.0,
    n=DEFAULT_SMOOTH_N,
    sigma=DEFAULT_SMOOTH_SIGMA,
    seed=0,
    c1=DEFAULT_C1,
    power_iters=DEFAULT_POWER_ITERS,
    channels=1,
    solver_config=None,
):
    """CASO with gradient and Hessian averaged over n noisy inputs.

    Each noisy point contributes its own local linearization, so the
    averaged operator is mean_i W_i A_i W_i^T. Noise is drawn once per
    solve; sigma = 0 reduces to plain caso exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return replace(
            caso(
                sample,
                net,
                lam1,
                c1=c1,
                power_iters=power_iters,
                seed=seed,
                channels=channels,
                solver_config=solver_config,
            ),
            method="smooth-caso",
        )
    trace = forward(net, sample.x, sample.y)
    rng = np.random.default_rng(seed)
    Z = _noise_inputs(sample.x, n, sigma, rng)
    acc = np.zeros(net.input_dim)
    pieces = []
    for i in range(n):
        z = Z[i]
        acc += input_gradient(net, z, sample.y)
        if net.spec.piecewise_linear:
            lin = local_linearization(net, z)
            pieces.append((lin.W, forward(net, z).probs))
        else:
            pieces.append(z)
    g = acc / n

    if net.spec.piecewise_linear:

        def hvp(v):
            out = np.zeros_like(v)
            for Wz, pz in pieces:
                out += hvp_closed_form(Wz, pz, v)
            return out / n

    else:

        def hvp(v):
            out = np.zeros_like(v)
            for z in pieces:
                out += hvp_finite_diff(net, z, sample.y, v)
            return out / n

    L = max(largest_eigenvalue(hvp, net.input_dim, iters=power_iters, seed=seed), 0.0)
    lam2 = select_lambda2(L, c1)
    obj = ObjectiveSpec(gradient=g, hvp=hvp, lam1=lam1, lam2=lam2, curvature_bound=L)
    res = fista_solve(obj, solver_config)
    return _finish("smooth-caso", net, sample, trace, res, lam1, lam2, channels)


def vanilla_gradient(sample, net, channels=1):
    """Gradient of the predicted class score with respect to the input."""
    trace = forward(net, sample.x, sample.y)
    pred = int(np.argmax(trace.logits))
    delta = logit_gradient(net, sample.x, pred)
    return SaliencyResult(
        method="grad",
        delta=delta,
        eta=sparsity_ratio(delta, channels),
        p_max=float(trace.probs.max()),
    )


def smoothgrad(
    sample,
    net,
    n=DEFAULT_SMOOTH_N,
    sigma=DEFAULT_SMOOTH_SIGMA,
    seed=0,
    channels=1,
):
    """Vanilla gradient averaged over n seeded Gaussian perturbations.

    The predicted class is fixed at the clean input; sigma is a fraction
    of the input's dynamic range and sigma = 0 reduces to the plain
    vanilla gradient exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0.0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return replace(vanilla_gradient(sample, net, channels), method="smoothgrad")
    trace = forward(net, sample.x, sample.y)
    pred = int(np.argmax(trace.logits))
    rng = np.random.default_rng(seed)
    Z = _noise_inputs(sample.x, n, sigma, rng)
    acc = np.zeros(net.input_dim)
    for i in range(n):
        acc += logit_gradient(net, Z[i], pred)
    delta = acc / n
    return SaliencyResult(
        method="smoothgrad",
        delta=delta,
        eta=sparsity_ratio(delta, channels),
        p_max=float(trace.probs.max()),
    )


def integrated_gradients(sample, net, baseline=None, steps=DEFAULT_IG_STEPS, channels=1):
    """Integrated gradients of the loss along the straight baseline path.

    Midpoint Riemann sum with `steps` panels:

        IG = (x - x') * 1/m sum_k grad_loss(x' + (k - 1/2)/m (x - x'))

    The default baseline is the zero vector. The completeness residual
    |sum(IG) - (loss(x) - loss(x'))| shrinks as the step count grows.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = sample.x
    if baseline is None:
        baseline = np.zeros_like(x)
    baseline = np.asarray(baseline, dtype=np.float64)
    if baseline.shape != x.shape:
        raise DimensionError("baseline shape does not match the input")
    trace = forward(net, x, sample.y)
    path = x - baseline
    acc = np.zeros_like(x)
    for k in range(1, steps + 1):
        t = (k - 0.5) / steps
        acc += input_gradient(net, baseline + t * path, sample.y)
    delta = path * (acc / steps)
    return SaliencyResult(
        method="integrated-gradients",
        delta=delta,
        eta=sparsity_ratio(delta, channels),
        p_max=float(trace.probs.max()),
    )


_SWEEP_METHODS = {
    "cafo": cafo,
    "caso": caso,
    "smooth-cafo": smooth_cafo,
    "smooth-caso": smooth_caso,
}


@dataclass(frozen=True)
class SweepOutcome:
    """Result of a lam1 sweep.

    results holds one SaliencyResult per grid value in grid order;
    refinements the extra solves produced by halving; selected_index
    points into results + refinements. target_met is False when no
    candidate ever landed in eta_range and the selection is best-effort.
    """

    grid: tuple[float, ...]
    eta_range: tuple[float, float]
    results: tuple[SaliencyResult, ...]
    refinements: tuple[SaliencyResult, ...]
    selected_index: int
    target_met: bool

    @property
    def all_results(self):
        return self.results + self.refinements

    @property
    def selected(self):
        return self.all_results[self.selected_index]


def lambda1_sweep(
    sample,
    net,
    method="cafo",
    grid=None,
    eta_range=(0.75, 1.0),
    max_refinements=20,
    channels=1,
    **method_kwargs,
):
    """Solve across a lam1 grid and pick the sparsest useful map.

    Among candidates with eta in [eta_range) the one with the highest
    surrogate objective wins, ties going to the smaller lam1. If no grid
    candidate qualifies, the first lam1 whose map is all zero is halved
    and re-solved, up to max_refinements times. When even that never
    reaches the range the outcome is flagged and the selection falls back
    to the densest non-trivial candidate.
    """
    if method not in _SWEEP_METHODS:
        raise ValueError(f"unknown sweep method {method!r}")
    if grid is None:
        grid = DEFAULT_LAMBDA1_GRID
    grid = tuple(float(v) for v in grid)
    if len(grid) == 0:
        raise ValueError("grid must not be empty")
    if any(v < 0 for v in grid):
        raise ValueError("grid values must be nonnegative")
    if list(grid) != sorted(set(grid)):
        raise ValueError("grid must be strictly ascending")
    lo, hi = float(eta_range[0]), float(eta_range[1])
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError("eta_range must satisfy 0 <= lo < hi <= 1")
    fn = _SWEEP_METHODS[method]

    def solve(lam):
        return fn(sample, net, lam, channels=channels, **method_kwargs)

    def in_range(r):
        return lo <= r.eta < hi

    results = [solve(lam) for lam in grid]
    refinements = []
    if not any(in_range(r) for r in results):
        zero_at = next(
            (i for i, r in enumerate(results) if not np.any(r.delta)), None
        )
        if zero_at is not None:
            lam = grid[zero_at]
            for _ in range(max_refinements):
                lam = lam / 2.0
                r = solve(lam)
                refinements.append(r)
                if in_range(r):
                    break

    combined = results + refinements
    qualifying = [i for i, r in enumerate(combined) if in_range(r)]
    if qualifying:
        selected = max(
            qualifying, key=lambda i: (combined[i].loss_gain, -combined[i].lam1)
        )
        target_met = True
    else:
        target_met = False
        nontrivial = [i for i, r in enumerate(combined) if r.eta < hi]
        if nontrivial:
            selected = max(
                nontrivial, key=lambda i: (combined[i].eta, combined[i].loss_gain)
            )
        else:
            selected = 0
    return SweepOutcome(
        grid=grid,
        eta_range=(lo, hi),
        results=tuple(results),
        refinements=tuple(refinements),
        selected_index=selected,
        target_met=target_met,
    )


@dataclass(frozen=True)
class MethodRequest:
    """A method name, a sample, and every knob the methods understand."""

    method: str
    sample: Sample
    lam1: float = 0.0
    c1: float = DEFAULT_C1
    smooth_n: int = DEFAULT_SMOOTH_N
    smooth_sigma: float = DEFAULT_SMOOTH_SIGMA
    ig_steps: int = DEFAULT_IG_STEPS
    power_iters: int = DEFAULT_POWER_ITERS
    seed: int = 0
    channels: int = 1
    solver: SolverConfig | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


def run_request(net, request):
    """Dispatch a MethodRequest to the matching interpretation method."""
    m = request.method
    s = request.sample
    ch = request.channels
    if m == "grad":
        return vanilla_gradient(s, net, channels=ch)
    if m == "smoothgrad":
        return smoothgrad(
            s, net, n=request.smooth_n, sigma=request.smooth_sigma,
            seed=request.seed, channels=ch,
        )
    if m == "integrated-gradients":
        return integrated_gradients(s, net, steps=request.ig_steps, channels=ch)
    if m == "cafo":
        return cafo(
            s, net, request.lam1, c1=request.c1, channels=ch,
            solver_config=request.solver,
        )
    if m == "caso":
        return caso(
            s, net, request.lam1, c1=request.c1, power_iters=request.power_iters,
            seed=request.seed, channels=ch, solver_config=request.solver,
        )
    if m == "smooth-cafo":
        return smooth_cafo(
            s, net, request.lam1, n=request.smooth_n, sigma=request.smooth_sigma,
            seed=request.seed, c1=request.c1, channels=ch,
            solver_config=request.solver,
        )
    return smooth_caso(
        s, net, request.lam1, n=request.smooth_n, sigma=request.smooth_sigma,
        seed=request.seed, c1=request.c1, power_iters=request.power_iters,
        channels=ch, solver_config=request.solver,
    )

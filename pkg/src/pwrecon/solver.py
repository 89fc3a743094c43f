"""ADMM reconstruction joining channel-data fidelity, blur fidelity, and sparsity.

The estimate minimizes

    gamma_d/2 ||y_das - H x||^2 + gamma_b/2 ||y_ch - Phi x||^2 + mu ||x||_1

by splitting x into three coupled copies: u carries the blur term and is
updated in closed form in the Fourier domain, z carries the channel-data
term and is updated by an iterative solver on its normal equations, and w
absorbs the l1 term through soft thresholding. Scaled multipliers tie the
copies together. Four modes reuse the same cycle: ``joint`` keeps both data
terms, ``beamform_only``/``deconv_only`` zero one of them, and
``sequential`` chains beamform_only into deconv_only using the first
stage's output as the blur-term observation.

One solve owns its state; concurrent solves on shared immutable inputs are
safe.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .beamform import RfImage
from .psf import conv_apply, deconv_update

__all__ = [
    "InnerSettings",
    "SolverConfig",
    "SolverState",
    "SolveReport",
    "SolverError",
    "DivergenceError",
    "objective",
    "beamform_update",
    "sparsity_update",
    "multiplier_update",
    "solve",
]

MODES = ("joint", "beamform_only", "deconv_only", "sequential")

_TINY = 1e-30


class SolverError(RuntimeError):
    """Inner or outer iteration failure; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class DivergenceError(SolverError):
    """Objective blew up past the divergence guard."""


@dataclass(frozen=True)
class InnerSettings:
    """Stopping contract for the channel-data subproblem solver."""

    max_iter: int = 50
    tol: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("inner max_iter must be at least 1")
        if self.tol <= 0:
            raise ValueError("inner tol must be positive")


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters and mode for one reconstruction.

    ``normalize`` rescales the observations to unit peak before iterating
    (and undoes the scale on the result) so that the l1 weight mu keeps a
    consistent meaning across datasets. ``stage2`` optionally overrides the
    deconvolution-stage hyperparameters in sequential mode.
    """

    gamma_d: float = 1.0
    gamma_b: float = 0.1
    mu: float = 0.1
    beta: float = 1e3
    epsilon: float = 1e-3
    max_iter: int = 100
    mode: str = "joint"
    inner: InnerSettings = field(default_factory=InnerSettings)
    normalize: bool = True
    stage2: "SolverConfig | None" = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError("mode must be one of %s" % (MODES,))
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gamma_d < 0 or self.gamma_b < 0 or self.mu < 0:
            raise ValueError("gamma_d, gamma_b, mu must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.mode == "beamform_only" and self.gamma_d != 0.0:
            raise ValueError("beamform_only requires gamma_d = 0")
        if self.mode == "deconv_only" and self.gamma_b != 0.0:
            raise ValueError("deconv_only requires gamma_b = 0")
        if self.gamma_d + self.gamma_b <= 0:
            raise ValueError("at least one data term must have positive weight")


@dataclass
class SolverState:
    """Split iterates, multipliers, and per-iteration diagnostics."""

    u: np.ndarray
    w: np.ndarray
    z: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    iter: int = 0
    objective_history: list = field(default_factory=list)
    primal_residuals: list = field(default_factory=list)  # (|u-z|, |u-w|)


@dataclass
class SolveReport:
    """Outcome of one solve: final image plus convergence diagnostics."""

    result: RfImage
    converged: bool
    iterations: int
    wall_time: float
    config: SolverConfig
    state: SolverState
    scale: float = 1.0
    stages: list = field(default_factory=list)

    def to_json_dict(self):
        d = {
            "converged": self.converged,
            "iterations": self.iterations,
            "mode": self.config.mode,
            "hyperparameters": {
                "gamma_d": self.config.gamma_d,
                "gamma_b": self.config.gamma_b,
                "mu": self.config.mu,
                "beta": self.config.beta,
                "epsilon": self.config.epsilon,
                "max_iter": self.config.max_iter,
            },
            "objective_history": list(self.state.objective_history),
            "primal_residuals": [list(r) for r in self.state.primal_residuals],
            "scale": self.scale,
            "timing": {"wall_time_s": self.wall_time},
        }
        if self.stages:
            d["stages"] = [s.to_json_dict() for s in self.stages]
        return d


def objective(x, y_das, psf, model, y_ch, cfg):
    """Value of the composite objective at image x.

    Terms whose weight is zero are skipped, so their operators / data may
    be absent.
    """
    x = np.asarray(x, dtype=np.float64)
    total = cfg.mu * float(np.sum(np.abs(x)))
    if cfg.gamma_d > 0:
        resid = np.asarray(y_das) - conv_apply(psf, x)
        total += 0.5 * cfg.gamma_d * float(np.sum(resid**2))
    if cfg.gamma_b > 0:
        resid = np.asarray(y_ch) - model.apply(x.reshape(-1, order="F"))
        total += 0.5 * cfg.gamma_b * float(np.sum(resid**2))
    return total


def _conjugate_residual(apply_a, b, x0, tol, max_iter):
    """Minimize ||b - A x|| over growing Krylov spaces (A symmetric PD).

    Residual norms are nonincreasing by construction. Returns the iterate
    and the recorded residual-norm trace.
    """
    x = x0.copy()
    r = b - apply_a(x)
    norms = [float(np.linalg.norm(r))]
    threshold = tol * (1.0 + float(np.linalg.norm(b)))
    if norms[-1] <= threshold:
        return x, norms
    p = r.copy()
    ar = apply_a(r)
    ap = ar.copy()
    r_ar = float(r @ ar)
    for _ in range(max_iter):
        ap_ap = float(ap @ ap)
        if ap_ap <= 0.0 or r_ar == 0.0:
            break
        alpha = r_ar / ap_ap
        x = x + alpha * p
        r = r - alpha * ap
        nr = float(np.linalg.norm(r))
        if not np.isfinite(nr):
            raise SolverError("non-finite residual in inner solver", norms)
        norms.append(nr)
        if nr <= threshold:
            break
        ar = apply_a(r)
        r_ar_new = float(r @ ar)
        gamma = r_ar_new / r_ar
        p = r + gamma * p
        ap = ar + gamma * ap
        r_ar = r_ar_new
    return x, norms


def beamform_update(model, y_ch, u, lam2, gamma_b, beta, inner, z0=None):
    """Channel-data subproblem: approximately minimize over z

        gamma_b/2 ||y_ch - Phi z||^2 + beta/2 ||u - z + lam2/beta||^2.

    Solved on the normal equations (gamma_b Phi^T Phi + beta I) z = rhs to
    the inner gradient tolerance, warm-started from ``z0``. With
    gamma_b = 0 the exact proximal point u + lam2/beta is returned.

    Returns (z, gradient_norms).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if gamma_b == 0.0:
        return u + lam2 / beta, [0.0]
    shape = u.shape
    y_vec = np.asarray(y_ch, dtype=np.float64).reshape(-1)
    b = gamma_b * model.apply_adjoint(y_vec) + (beta * u + lam2).reshape(-1, order="F")

    def apply_a(v):
        return gamma_b * model.apply_adjoint(model.apply(v)) + beta * v

    x0 = (z0 if z0 is not None else u).reshape(-1, order="F")
    z_vec, norms = _conjugate_residual(apply_a, b, x0, inner.tol, inner.max_iter)
    return z_vec.reshape(shape, order="F"), norms


def sparsity_update(u, lam1, mu, beta):
    """Soft-thresholding step: shrink u + lam1/beta toward zero by mu/beta."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    v = u + lam1 / beta
    return np.maximum(np.abs(v) - mu / beta, 0.0) * np.sign(v)


def multiplier_update(state, beta):
    """Ascend the scaled multipliers along the consensus gaps."""
    state.lam1 = state.lam1 + beta * (state.u - state.w)
    state.lam2 = state.lam2 + beta * (state.u - state.z)
    return state


def _as_array(x):
    if isinstance(x, RfImage):
        return x.data
    return np.asarray(x, dtype=np.float64) if x is not None else None


def solve(cfg, model=None, y_ch=None, psf=None, y_das=None, x0=None):
    """Run the full splitting cycle until the relative objective change
    falls below epsilon or max_iter is reached.

    Parameters
    ----------
    cfg : SolverConfig
    model : SparseSystemMatrix, required when gamma_b > 0.
    y_ch : ChannelData or flat channel vector, required with ``model``.
    psf : Psf, required when gamma_d > 0.
    y_das : RfImage or (nz, nx) array, required with ``psf``.
    x0 : optional (nz, nx) array initializing u = w = z (multipliers start
        at zero). Defaults to all zeros.

    Returns a SolveReport whose result is the blur-side iterate u (the
    channel-side iterate z for beamform_only). Raises DivergenceError if
    the objective exceeds 1e6 times its initial value.
    """
    t_start = time.perf_counter()
    if cfg.mode == "sequential":
        return _solve_sequential(cfg, model, y_ch, psf, y_das, x0, t_start)

    needs_channel = cfg.gamma_b > 0
    needs_blur = cfg.gamma_d > 0
    if needs_channel and (model is None or y_ch is None):
        raise ValueError("mode %r needs a system matrix and channel data" % cfg.mode)
    if needs_blur and (psf is None or y_das is None):
        raise ValueError("mode %r needs a PSF and a reference image" % cfg.mode)

    grid = None
    if isinstance(y_das, RfImage):
        grid = y_das.grid
    if model is not None:
        if grid is not None and model.grid != grid:
            raise ValueError("reference image grid does not match system matrix")
        grid = model.grid
    if grid is None:
        raise ValueError("need a system matrix or RfImage observation to fix the grid")
    shape = grid.shape

    y_das_arr = _as_array(y_das)
    if y_das_arr is not None and y_das_arr.shape != shape:
        raise ValueError("reference image shape does not match grid")
    if hasattr(y_ch, "to_vector"):
        y_ch_vec = y_ch.to_vector()
    else:
        y_ch_vec = _as_array(y_ch)
        y_ch_vec = None if y_ch_vec is None else y_ch_vec.reshape(-1)
    if y_ch_vec is not None and model is not None and y_ch_vec.size != model.num_rows:
        raise ValueError("channel vector length does not match system matrix rows")

    # normalize observations to unit peak so mu has a consistent scale
    scale = 1.0
    if cfg.normalize:
        ref = y_das_arr if needs_blur else y_ch_vec
        peak = float(np.max(np.abs(ref))) if ref is not None and ref.size else 0.0
        if peak > 0:
            scale = peak
    yd = y_das_arr / scale if y_das_arr is not None else None
    yc = y_ch_vec / scale if y_ch_vec is not None else None

    init = np.zeros(shape) if x0 is None else np.asarray(x0, dtype=np.float64) / scale
    if init.shape != shape:
        raise ValueError("x0 shape does not match grid")
    state = SolverState(
        u=init.copy(),
        w=init.copy(),
        z=init.copy(),
        lam1=np.zeros(shape),
        lam2=np.zeros(shape),
    )
    # the stopping objective tracks the fidelity-side iterate: u whenever the
    # blur term is active, otherwise z (u lags z by a cycle when gamma_d = 0)
    track_u = cfg.gamma_d > 0.0
    obj0 = objective(state.u if track_u else state.z, yd, psf, model, yc, cfg)
    state.objective_history.append(obj0)
    guard = 1e6 * max(obj0, _TINY)

    converged = False
    for it in range(1, cfg.max_iter + 1):
        state.u = deconv_update(
            yd if yd is not None else np.zeros(shape),
            psf,
            state.w,
            state.z,
            state.lam1,
            state.lam2,
            cfg.gamma_d,
            cfg.beta,
        )
        state.z, _ = beamform_update(
            model, yc, state.u, state.lam2, cfg.gamma_b, cfg.beta, cfg.inner, z0=state.z
        )
        state.w = sparsity_update(state.u, state.lam1, cfg.mu, cfg.beta)
        multiplier_update(state, cfg.beta)
        state.iter = it

        obj = objective(state.u if track_u else state.z, yd, psf, model, yc, cfg)
        state.objective_history.append(obj)
        state.primal_residuals.append(
            (
                float(np.linalg.norm(state.u - state.z)),
                float(np.linalg.norm(state.u - state.w)),
            )
        )
        if not np.isfinite(obj):
            raise SolverError(
                "non-finite objective at iteration %d" % it, state.objective_history
            )
        if obj > guard:
            raise DivergenceError(
                "objective diverged at iteration %d" % it, state.objective_history
            )
        prev = state.objective_history[-2]
        if abs(obj - prev) / max(prev, _TINY) <= cfg.epsilon:
            converged = True
            break

    result_arr = (state.z if cfg.mode == "beamform_only" else state.u) * scale
    return SolveReport(
        result=RfImage(data=result_arr, grid=grid),
        converged=converged,
        iterations=state.iter,
        wall_time=time.perf_counter() - t_start,
        config=cfg,
        state=state,
        scale=scale,
    )


def _solve_sequential(cfg, model, y_ch, psf, y_das, x0, t_start):
    """Channel-data stage to convergence, then blur stage on its output."""
    if model is None or y_ch is None:
        raise ValueError("sequential mode needs a system matrix and channel data")
    if psf is None:
        raise ValueError("sequential mode needs a PSF for its second stage")
    stage1_cfg = replace(cfg, mode="beamform_only", gamma_d=0.0, stage2=None)
    report1 = solve(stage1_cfg, model=model, y_ch=y_ch, x0=x0)
    base2 = cfg.stage2 if cfg.stage2 is not None else cfg
    stage2_cfg = replace(base2, mode="deconv_only", gamma_b=0.0, stage2=None)
    report2 = solve(stage2_cfg, psf=psf, y_das=report1.result)
    return SolveReport(
        result=report2.result,
        converged=report1.converged and report2.converged,
        iterations=report2.iterations,
        wall_time=time.perf_counter() - t_start,
        config=cfg,
        state=report2.state,
        scale=report2.scale,
        stages=[report1, report2],
    )

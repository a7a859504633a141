"""Minimum distance estimation of the ensemble parameters.

The estimator minimizes the squared Frobenius distance between the model's
sum-process transition matrix and the empirical transition frequencies over
the parameter box [0,1]^(2L).  Because row i of the model matrix depends only
on (lam_i, eta_i), the objective separates across rows; the full product-grid
initialization is therefore computed exactly, row by row, and never needs to
enumerate the 9^(2L) grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .core import DiscreteTrace
from .model import (
    CooperativityReport,
    ParamVector,
    TransitionMatrix,
    classify_cooperativity,
    transition_row,
    transition_rows_grid,
    validate_theta,
)


class TooShort(ValueError):
    pass


class DimMismatch(ValueError):
    pass


DEFAULT_GRID = tuple(np.round(np.arange(0.1, 0.95, 0.1), 10))


@dataclass(frozen=True)
class MdeOptions:
    """Solver configuration for the minimum distance fit."""

    grid: tuple = DEFAULT_GRID
    max_iters: int = 10_000
    objective_tol: float = 1e-12
    barrier_mu0: float = 1e-3
    barrier_decay: float = 1e-2
    barrier_mu_min: float = 1e-11
    fd_step: float = 1e-7
    identifiability_branch: str = "auto"  # auto | plus | minus

    def __post_init__(self):
        if len(self.grid) == 0:
            raise ValueError("grid must be nonempty")
        if self.objective_tol <= 0 or self.max_iters <= 0:
            raise ValueError("tolerances and iteration limits must be positive")
        if self.identifiability_branch not in ("auto", "plus", "minus"):
            raise ValueError("identifiability_branch must be auto, plus or minus")


@dataclass
class MdeResult:
    theta_hat: ParamVector
    objective: float
    diagnostics: dict = field(default_factory=dict)


def empirical_transition_matrix(trace, L: int | None = None) -> TransitionMatrix:
    """Transition frequencies of a discrete trace; rows of states that were
    never visited (as transition origins) are masked."""
    values = np.asarray(trace.values if isinstance(trace, DiscreteTrace) else trace)
    if L is None:
        if not isinstance(trace, DiscreteTrace):
            raise ValueError("L is required for a bare value sequence")
        L = trace.ladder.L
    if len(values) < 2:
        raise TooShort("need at least two samples to count transitions")
    if values.min() < 0 or values.max() > L:
        raise ValueError(f"trace values outside 0..{L}")
    dim = L + 1
    flat = values[:-1] * dim + values[1:]
    counts = np.bincount(flat, minlength=dim * dim).reshape(dim, dim).astype(float)
    row_counts = counts.sum(axis=1)
    entries = np.full((dim, dim), np.nan)
    visited = row_counts > 0
    entries[visited] = counts[visited] / row_counts[visited, None]
    return TransitionMatrix(entries, row_counts=row_counts.astype(np.int64))


def _row_residuals(theta: ParamVector, q_hat: TransitionMatrix) -> np.ndarray:
    L = theta.L
    mask = q_hat.row_mask()
    out = np.zeros(L + 1)
    for i in range(L + 1):
        if not mask[i]:
            continue
        li = float(theta.lam[i]) if i < L else 0.0
        ei = float(theta.eta[i - 1]) if i >= 1 else 0.0
        diff = transition_row(L, i, li, ei) - q_hat.entries[i]
        out[i] = float(diff @ diff)
    return out


def mde_objective(theta: ParamVector, q_hat: TransitionMatrix) -> float:
    """Squared Frobenius distance between model and empirical transition
    matrices; masked rows contribute nothing."""
    validate_theta(theta)
    if q_hat.dim != theta.L + 1:
        raise DimMismatch(f"matrix dim {q_hat.dim} does not match L = {theta.L}")
    return float(_row_residuals(theta, q_hat).sum())


def grid_init(q_hat: TransitionMatrix, L: int, grid=DEFAULT_GRID) -> ParamVector:
    """Exact arg-min of the objective over the full product grid.

    Row separability reduces the product-grid search to an independent scan
    of the candidate (lam_i, eta_i) pairs per row; ties resolve to the
    lexicographically smallest parameter vector (masked rows therefore take
    the smallest grid value).  The middle row of an even L is mirror
    symmetric under (lam, eta) -> (1-eta, 1-lam), so its grid ties come in
    branch pairs; those resolve toward the plus branch (lam >= 1 - eta),
    matching the identifiability convention.
    """
    if q_hat.dim != L + 1:
        raise DimMismatch(f"matrix dim {q_hat.dim} does not match L = {L}")
    grid = np.asarray(sorted(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    mask = q_hat.row_mask()
    lam = np.full(L, grid[0])
    eta = np.full(L, grid[0])
    for i in range(L + 1):
        has_lam = i < L
        has_eta = i >= 1
        if not mask[i]:
            continue
        target = q_hat.entries[i]
        lam_cands = grid if has_lam else np.array([0.0])
        eta_cands = grid if has_eta else np.array([0.0])
        scored = []
        for lv in lam_cands:
            for ev in eta_cands:
                diff = transition_row(L, i, float(lv), float(ev)) - target
                scored.append((float(diff @ diff), float(lv), float(ev)))
        min_val = min(s[0] for s in scored)
        ties = [s for s in scored if s[0] <= min_val + 1e-15]
        if L % 2 == 0 and i == L // 2:
            ties.sort(key=lambda s: (s[1] < 1.0 - s[2], s[1], s[2]))
        else:
            ties.sort(key=lambda s: (s[1], s[2]))
        _, best_lam, best_eta = ties[0]
        if has_lam:
            lam[i] = best_lam
        if has_eta:
            eta[i - 1] = best_eta
    return ParamVector(L, lam, eta)


def _row_residual(L, i, lam_i, eta_i, target) -> float:
    diff = transition_row(L, i, lam_i, eta_i) - target
    return float(diff @ diff)


def _data_gradient(x: np.ndarray, L: int, q_hat: TransitionMatrix, h: float) -> np.ndarray:
    """Central-difference gradient of the fit objective.  Coordinate k only
    enters one row of the model matrix, so each partial derivative needs two
    single-row evaluations."""
    mask = q_hat.row_mask()
    grad = np.zeros_like(x)
    for k in range(len(x)):
        i = k if k < L else k - L + 1  # row touched by lam_k / eta_{k-L+1}
        if not mask[i]:
            continue
        target = q_hat.entries[i]
        step = h * max(1.0, abs(x[k]))
        xp, xm = x[k] + step, x[k] - step
        if k < L:
            eta_i = x[L + i - 1] if i >= 1 else 0.0
            fp = _row_residual(L, i, xp, eta_i, target)
            fm = _row_residual(L, i, xm, eta_i, target)
        else:
            lam_i = x[i] if i < L else 0.0
            fp = _row_residual(L, i, lam_i, xp, target)
            fm = _row_residual(L, i, lam_i, xm, target)
        grad[k] = (fp - fm) / (2 * step)
    return grad


def _coordinate_polish(fun, x, lo, hi, tol, budget):
    """Descent polish: per-coordinate moves with step halving until no move
    at the finest step improves the objective.  Sweeps that improve the
    objective by less than a millionth of its value stop early; the polish
    only needs to clean up the terminal digits."""
    x = x.copy()
    fx = fun(x)
    evals = 0
    step = 1e-3
    while step > 1e-10 and evals < budget:
        improved = False
        f_before = fx
        for i in range(len(x)):
            for sign in (1.0, -1.0):
                xi = x[i] + sign * step
                if not lo[i] < xi < hi[i]:
                    continue
                trial = x.copy()
                trial[i] = xi
                ft = fun(trial)
                evals += 1
                if ft < fx - 1e-18:
                    x, fx = trial, ft
                    improved = True
        if not improved:
            step *= 0.5
        elif fx < tol or f_before - fx < 1e-6 * max(fx, 1e-300):
            step *= 0.5
    return x, fx


def _branch_gap(x: np.ndarray, L: int, sign: float) -> float:
    half = L // 2
    return sign * (x[half] - 1.0 + x[L + half - 1])


def _refine_rows(x0: np.ndarray, L: int, q_hat: TransitionMatrix,
                 branch_sign: float | None) -> np.ndarray:
    """Shrinking per-row grid refinement.

    The objective separates across rows (lam_i and eta_i only enter row i),
    so the global minimum decomposes into L+1 independent two-parameter
    problems; a shrinking local grid per row is immune to the local minima a
    joint descent can fall into.  The branch constraint only affects the
    middle row, whose candidates are filtered accordingly.
    """
    x = x0.copy()
    mask = q_hat.row_mask()
    half = L // 2 if L % 2 == 0 else -1
    offsets = np.linspace(-1.0, 1.0, 11)
    n_fine = 61 if L <= 8 else 41
    fine = np.linspace(0.008, 0.992, n_fine)

    def residuals(i, target, lam_c, eta_c):
        rows = transition_rows_grid(L, i, lam_c, eta_c)
        vals = ((rows - target[None, :]) ** 2).sum(axis=1)
        if branch_sign is not None and i == half:
            vals = np.where(branch_sign * (lam_c - 1.0 + eta_c) >= 0, vals, np.inf)
        return vals

    def shrink(i, target, lam_i, eta_i, has_lam, has_eta, best):
        width = 0.05
        while width > 1e-7:
            lam_c = np.clip(lam_i + width * offsets, 1e-9, 1 - 1e-9) if has_lam \
                else np.full(len(offsets), lam_i)
            eta_c = np.clip(eta_i + width * offsets, 1e-9, 1 - 1e-9) if has_eta \
                else np.full(len(offsets), eta_i)
            ll, ee = np.meshgrid(np.unique(lam_c), np.unique(eta_c), indexing="ij")
            vals = residuals(i, target, ll.ravel(), ee.ravel())
            k = int(np.argmin(vals))
            if vals[k] < best - 1e-20:
                best = float(vals[k])
                lam_i, eta_i = float(ll.ravel()[k]), float(ee.ravel()[k])
            else:
                width *= 0.2
        return best, lam_i, eta_i

    for i in range(L + 1):
        if not mask[i]:
            continue
        has_lam = i < L
        has_eta = i >= 1
        target = q_hat.entries[i]
        lam_i = x[i] if has_lam else 0.0
        eta_i = x[L + i - 1] if has_eta else 0.0
        start_val = float(residuals(i, target, np.array([lam_i]), np.array([eta_i]))[0])
        # full 2-D scan first: the row residual can be multimodal and a
        # coarse initialization may sit in the wrong basin
        ll, ee = np.meshgrid(fine if has_lam else [lam_i],
                             fine if has_eta else [eta_i], indexing="ij")
        ll, ee = ll.ravel(), ee.ravel()
        vals = residuals(i, target, ll, ee)
        order = np.argsort(vals, kind="stable")[:6]
        # narrow basins can hide between scan points: polish several starts
        best = (start_val if np.isfinite(start_val) else np.inf, lam_i, eta_i)
        for k in order:
            if not np.isfinite(vals[k]):
                continue
            cand = shrink(i, target, float(ll[k]), float(ee[k]), has_lam, has_eta,
                          float(vals[k]))
            if cand[0] < best[0]:
                best = cand
        _, lam_i, eta_i = best
        if has_lam:
            x[i] = lam_i
        if has_eta:
            x[L + i - 1] = eta_i
    return x


def _fit_one_branch(objective, q_hat_ref, x0, L, options: MdeOptions, branch_sign: float | None):
    """Log-barrier minimization over (0,1)^(2L), optionally restricted to one
    identifiability branch for even L; returns the best iterate seen."""
    eps = 1e-9
    lo = np.full(len(x0), eps)
    hi = np.full(len(x0), 1.0 - eps)
    x = np.clip(x0, 1e-4, 1 - 1e-4)
    if branch_sign is not None and _branch_gap(x, L, branch_sign) < 1e-6:
        half = L // 2
        # nudge onto the branch: raise whichever of lam/eta has headroom
        need = 1e-4 + 1.0 - x[L + half - 1]
        if branch_sign > 0:
            if need < 1 - 1e-4:
                x[half] = max(x[half], need)
            else:
                x[L + half - 1] = max(x[L + half - 1], 1e-4 + 1.0 - x[half])
        else:
            give = 1.0 - x[L + half - 1] - 1e-4
            x[half] = min(x[half], max(give, 1e-4))
            if _branch_gap(x, L, branch_sign) < 0:
                x[L + half - 1] = min(x[L + half - 1], 1.0 - x[half] - 1e-4)

    x = _refine_rows(x, L, q_hat_ref, branch_sign)
    best_x = x.copy()
    best_f = objective(x)
    evals = 0
    mu = options.barrier_mu0
    while mu >= options.barrier_mu_min:
        def penalized(z, _mu=mu):
            if np.any(z <= 0.0) or np.any(z >= 1.0):
                return 1e50
            val = objective(z) - _mu * float(np.log(z).sum() + np.log1p(-z).sum())
            if branch_sign is not None:
                gap = _branch_gap(z, L, branch_sign)
                if gap <= 0:
                    return 1e50
                val -= _mu * np.log(gap)
            return val

        def penalized_grad(z, _mu=mu):
            grad = _data_gradient(z, L, q_hat_ref, options.fd_step)
            grad -= _mu * (1.0 / z - 1.0 / (1.0 - z))
            if branch_sign is not None:
                gap = _branch_gap(z, L, branch_sign)
                if gap > 0:
                    half = L // 2
                    grad[half] -= _mu * branch_sign / gap
                    grad[L + half - 1] -= _mu * branch_sign / gap
            return grad

        res = scipy.optimize.minimize(
            penalized,
            x,
            method="L-BFGS-B",
            jac=penalized_grad,
            bounds=list(zip(lo, hi)),
            options={"maxiter": 200, "ftol": 1e-16, "gtol": 1e-12},
        )
        evals += res.nfev * 3
        x = np.clip(res.x, lo, hi)
        fx = objective(x)
        if fx < best_f:
            best_f, best_x = fx, x.copy()
        if best_f < options.objective_tol or evals > options.max_iters * len(x0):
            break
        mu *= options.barrier_decay

    def boxed(z):
        if branch_sign is not None and _branch_gap(z, L, branch_sign) < 0:
            return np.inf
        return objective(z)

    x, fx = _coordinate_polish(boxed, best_x, lo, hi, options.objective_tol,
                               budget=options.max_iters)
    if fx < best_f:
        best_f, best_x = fx, x
    converged = best_f < options.objective_tol or evals <= options.max_iters * len(x0)
    return best_x, best_f, converged


def mde_fit(q_hat: TransitionMatrix, L: int, options: MdeOptions | None = None) -> MdeResult:
    """Minimum distance estimate of the parameter vector from empirical
    transition frequencies.

    Even L is solved once per identifiability branch (lam_{L/2} >= 1 -
    eta_{L/2} and the reverse) unless a branch is forced; the lower objective
    wins, with both recorded in the diagnostics.  The returned objective
    never exceeds the grid initialization's.
    """
    options = options or MdeOptions()
    if q_hat.dim != L + 1:
        raise DimMismatch(f"matrix dim {q_hat.dim} does not match L = {L}")
    mask = q_hat.row_mask()
    theta0 = grid_init(q_hat, L, options.grid)
    x0 = theta0.flat

    def objective(z):
        return float(_row_residuals(ParamVector.from_flat(z, L), q_hat).sum())

    if L % 2 == 1:
        branches = [None]
    elif options.identifiability_branch == "plus":
        branches = [1.0]
    elif options.identifiability_branch == "minus":
        branches = [-1.0]
    else:
        branches = [1.0, -1.0]

    solutions = {}
    for sign in branches:
        solutions[sign] = _fit_one_branch(objective, q_hat, x0, L, options, sign)
    if len(solutions) == 2:
        f_plus, f_minus = solutions[1.0][1], solutions[-1.0][1]
        # the two branches are observationally equivalent mirrors, so exact
        # input ties them to numerical noise; ties resolve to plus
        if abs(f_plus - f_minus) <= max(1e-12, 1e-9 * (1.0 + min(f_plus, f_minus))):
            key = 1.0
        else:
            key = min(solutions, key=lambda s: solutions[s][1])
    else:
        key = next(iter(solutions))
    x_best, f_best, converged = solutions[key]

    f0 = objective(x0)
    if f0 < f_best:
        x_best, f_best = x0, f0

    diagnostics = {
        "grid_objective": f0,
        "masked_rows": [int(i) for i in np.nonzero(~mask)[0]],
        "degenerate": bool(mask.sum() <= 1),
        "converged": bool(converged),
        "branch": {None: "none", 1.0: "plus", -1.0: "minus"}[key],
    }
    if L % 2 == 0 and len(branches) == 2:
        diagnostics["branch_objectives"] = {
            "plus": float(solutions[1.0][1]),
            "minus": float(solutions[-1.0][1]),
        }
    theta_hat = ParamVector.from_flat(np.asarray(x_best, dtype=float), L)
    validate_theta(theta_hat)
    return MdeResult(theta_hat=theta_hat, objective=float(f_best), diagnostics=diagnostics)


def cooperativity_report(theta_hat: ParamVector, tol: float = 1e-3) -> CooperativityReport:
    """Cooperativity verdict for a fitted parameter vector."""
    return classify_cooperativity(theta_hat, tol=tol)

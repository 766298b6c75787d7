"""Closed-form linear domain transformer.

For consecutive source domains (t, t+1) the least-squares classifier
``h`` fit on domain t+1 must also fit domain t after the linear transport
``X^t @ psi``. Setting the gradient in ``psi`` to zero gives
``G_t psi h h^T = X_t^T Y_t h^T`` (``G_t = X_t^T X_t``), which vectorizes to
``((h h^T) kron G_t) vec(psi) = vec(X_t^T Y_t h^T)`` with column-major vec.
Stacking all pairs gives an over-determined linear system in vec(psi).

Labels are used as -1/+1 for the squared loss; predictions threshold at 0.
Data rows are samples, so the transport acts as ``x_row @ psi``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

COND_LIMIT = 1e8
REFINE_STEPS = 2


class TooFewDomainsError(ValueError):
    pass


def to_pm1(y):
    return np.where(np.asarray(y) > 0, 1.0, -1.0)


def vec(m):
    """Column-major vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v, d):
    return np.asarray(v).reshape(d, d, order="F")


def _ridge_solve(gram, rhs, what):
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        warnings.warn(f"{what}: ill-conditioned Gram matrix (cond={cond:.3g}); adding ridge", RuntimeWarning, stacklevel=3)
        n = gram.shape[0]
        eps = 1e-8 * np.trace(gram) / n
        if eps <= 0:
            eps = 1e-8
        reg = gram + eps * np.eye(n)
        sol = np.linalg.solve(reg, rhs)
        # iterated refinement removes the ridge bias on the well-determined subspace
        for _ in range(REFINE_STEPS):
            sol = sol + np.linalg.solve(reg, rhs - gram @ sol)
        return sol, cond
    return np.linalg.solve(gram, rhs), cond


def fit_lsq_classifier(X, Y):
    """Least-squares linear classifier ``h`` minimizing ``||Y - X h||^2``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or Y.shape != (X.shape[0],):
        raise ValueError(f"fit_lsq_classifier: X {X.shape} and Y {Y.shape} do not match")
    h, _ = _ridge_solve(X.T @ X, X.T @ Y, "fit_lsq_classifier")
    return h


def assemble_block(X_t, Y_t, h_next):
    """``A_t = (h h^T) kron (X^T X)`` and ``B_t = vec(X^T Y h^T)`` for one domain pair."""
    X_t = np.asarray(X_t, dtype=np.float64)
    Y_t = np.asarray(Y_t, dtype=np.float64)
    h = np.asarray(h_next, dtype=np.float64).reshape(-1)
    if X_t.shape[1] != h.size or Y_t.shape != (X_t.shape[0],):
        raise ValueError(f"assemble_block: X {X_t.shape}, Y {Y_t.shape}, h {h.shape} are inconsistent")
    A = np.kron(np.outer(h, h), X_t.T @ X_t)
    B = vec(np.outer(X_t.T @ Y_t, h))
    return A, B


def stationarity_residual(X_t, Y_t, h_next, psi):
    """``X^T X psi h h^T - X^T Y h^T``, the unvectorized optimality condition."""
    h = np.asarray(h_next, dtype=np.float64).reshape(-1, 1)
    return X_t.T @ X_t @ psi @ h @ h.T - (X_t.T @ Y_t).reshape(-1, 1) @ h.T


@dataclass
class LinearSystem:
    A_stack: np.ndarray
    B_stack: np.ndarray
    blocks: list = field(default_factory=list)


@dataclass
class LinearPsi:
    psi: np.ndarray
    residual: float
    cond: float
    system: LinearSystem = None


def build_system(xs, ys):
    """Stack the blocks for the consecutive pairs of domains ``xs``/``ys`` (labels in {0,1})."""
    blocks = []
    for t in range(len(xs) - 1):
        h_next = fit_lsq_classifier(xs[t + 1], to_pm1(ys[t + 1]))
        blocks.append(assemble_block(xs[t], to_pm1(ys[t]), h_next))
    A = np.vstack([a for a, _ in blocks])
    B = np.concatenate([b for _, b in blocks])
    return LinearSystem(A, B, blocks)


def solve_psi(ds):
    """Solve the stacked system over the source domains of ``ds`` in the least-squares sense."""
    xs = [d.x for d in ds.sources]
    ys = [d.y for d in ds.sources]
    d = ds.d_in
    if len(xs) <= d:
        raise TooFewDomainsError(f"need more than d={d} source domains, got {len(xs)}")
    system = build_system(xs, ys)
    A, B = system.A_stack, system.B_stack
    v, _ = _ridge_solve(A.T @ A, A.T @ B, "solve_psi")
    return LinearPsi(unvec(v, d), float(np.linalg.norm(A @ v - B)), float(np.linalg.cond(A)), system)


def transport(x, psi, steps=1):
    out = np.asarray(x, dtype=np.float64)
    for _ in range(steps):
        out = out @ psi
    return out


def ldda_predict(psi, ds, horizon=1, steps=None):
    """Accuracy on target domain T+horizon of a classifier fit on transported source data.

    The source domain ``T + horizon - steps`` is pushed through ``psi``
    ``steps`` times (default: from the last source domain) and an
    least-squares classifier is fit on it with that domain's labels.
    """
    psi_m = psi.psi if isinstance(psi, LinearPsi) else np.asarray(psi)
    target = ds.target(horizon)
    steps = horizon if steps is None else steps
    src_index = ds.n_source + horizon - steps
    if steps < 1 or not 1 <= src_index <= ds.n_source:
        raise IndexError(f"cannot reach target {ds.n_source + horizon} in {steps} step(s) from a source domain")
    src = ds.domain(src_index)
    h = fit_lsq_classifier(transport(src.x, psi_m, steps), to_pm1(src.y))
    pred = (target.x @ h > 0).astype(np.int64)
    return float(np.mean(pred == target.y))

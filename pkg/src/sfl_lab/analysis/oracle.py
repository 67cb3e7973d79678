"""Reference optima for the convex objectives."""

from __future__ import annotations

import numpy as np

from ..models import Batch, SplitLogistic, SplitParams, SplitRidge


class ConvergenceError(RuntimeError):
    pass


def conjugate_gradient(A: np.ndarray, b: np.ndarray, tol: float = 1e-12,
                       max_iter: int | None = None) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    The residual is recomputed from scratch every ``n`` steps to stop
    rounding drift from masking a stall.
    """
    n = len(b)
    max_iter = max_iter or 50 * n
    x = np.zeros(n)
    r = b - A @ x
    p = r.copy()
    rs = float(r @ r)
    target = tol * max(1.0, float(np.linalg.norm(b)))
    for k in range(max_iter):
        if np.sqrt(rs) <= target:
            return x
        Ap = A @ p
        alpha = rs / float(p @ Ap)
        x = x + alpha * p
        if (k + 1) % n == 0:
            r = b - A @ x
            p = r.copy()
            rs = float(r @ r)
            continue
        r = r - alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.linalg.norm(b - A @ x) <= target:
        return x
    raise ConvergenceError(f"CG did not reach residual {target:.3g} in {max_iter} iterations")


def _logistic_optimum(obj: SplitLogistic, X, y, grad_tol: float, max_iter: int):
    batch = Batch(X, y)
    k = obj.client_size
    # 1/S always decreases an S-smooth loss, so backtracking stops there; near
    # the optimum the Armijo test is below float resolution and would stall
    floor = 1.0 / float(np.linalg.eigvalsh(obj.curvature_matrix(X))[-1])
    w = np.zeros(obj.size)
    loss, g = obj.loss_and_grad(SplitParams.from_flat(w, k), batch)
    step = floor
    for _ in range(max_iter):
        gn2 = float(g @ g)
        if np.sqrt(gn2) < grad_tol:
            return w
        while True:
            w_new = w - step * g
            loss_new, g_new = obj.loss_and_grad(SplitParams.from_flat(w_new, k), batch)
            if step <= floor or loss_new <= loss - 0.5 * step * gn2:
                break
            step = max(0.5 * step, floor)
        w, loss, g = w_new, loss_new, g_new
        step *= 2.0
    raise ConvergenceError(
        f"gradient descent did not reach ||grad|| < {grad_tol} in {max_iter} iterations")


def optimum_oracle(obj, X: np.ndarray, y: np.ndarray, grad_tol: float = 1e-10,
                   max_iter: int = 200_000) -> tuple[SplitParams, float]:
    """``(x*, f*)`` of the objective averaged over the whole dataset.

    With ``a_n = D_n / D`` this average equals ``sum_n a_n F_n``.
    """
    if isinstance(obj, SplitRidge):
        A = obj.curvature_matrix(X)
        b = X.T @ y / len(X)
        w = conjugate_gradient(A, b)
    elif isinstance(obj, SplitLogistic):
        w = _logistic_optimum(obj, X, y, grad_tol, max_iter)
    else:
        raise ConvergenceError(f"no optimum oracle for {type(obj).__name__}")
    x_star = SplitParams.from_flat(w, obj.client_size)
    f_star = obj.loss_and_grad(x_star, Batch(X, y))[0]
    return x_star, f_star

"""Geometry of the quotient manifold of rank-p factors.

A point is the equivalence class [Y] = {Y O : O orthogonal} of a full-rank
factor Y, identified with X = Y Y^T. Tangent vectors are represented by
horizontal lifts at Y. Three Riemannian metrics are supported; all solver
operations (inner products, projections, gradients, Hessian actions) are
parametrized by the metric choice and work on the lifted n-by-p arrays.

Notation used throughout: G = Y^T Y, P = Y G^{-1} Y^T (the orthogonal
projector onto range(Y)), N = A Y Y^T M + M Y Y^T A - B B^T (the gradient
of the quadratic model h at Y Y^T, equal to the equation residual), and
F_eta = Y eta^T + eta Y^T (the tangent direction lifted to the symmetric
ambient space).
"""

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .problems import FactorPoint


class Metric(enum.IntEnum):
    """Choice of Riemannian metric on the factor quotient manifold.

    EMBEDDED pulls the Euclidean inner product of the symmetric ambient
    space back through Y -> Y Y^T, g(xi, eta) = 2 tr(Y^T xi Y^T eta
    + Y^T Y xi^T eta), completed on the vertical space (where the pullback
    degenerates) by tr(Y^T Y (xi^V)^T eta^V). GRAM weights the factor inner
    product by the Gram matrix, g(xi, eta) = tr(Y^T Y xi^T eta). EUCLIDEAN
    is the plain factor inner product tr(xi^T eta). Integer values match
    the command line flag.
    """

    EMBEDDED = 1
    GRAM = 2
    EUCLIDEAN = 3


@dataclass
class HorizontalVector:
    """Horizontal lift of a tangent vector at a point, under a metric."""

    at: FactorPoint
    z: np.ndarray
    metric: Metric


@dataclass
class TangentDecomposition:
    """Vertical and horizontal parts of an ambient perturbation."""

    vertical: np.ndarray
    horizontal: np.ndarray


def _unwrap(vector):
    return vector.z if isinstance(vector, HorizontalVector) else vector


def _right_gram_solve(point, arr):
    """Apply (Y^T Y)^{-1} from the right to a k-by-p array."""
    return point.solve_gram(arr.T).T


def cost(problem, point):
    """Objective value tr(Y^T A Y Y^T M Y) - tr(Y^T B B^T Y) = h(Y Y^T)."""
    y = _factor(point)
    u = problem.a.mat @ y
    v = problem.m.mat @ y
    by = problem.b.T @ y
    return float(np.sum((y.T @ u) * (v.T @ y)) - np.sum(by * by))


def _factor(point):
    return point.y if isinstance(point, FactorPoint) else np.asarray(point, float)


def horizontal_inner(metric, at, xi, eta):
    """Inner product g_Y(xi, eta) restricted to horizontal arguments.

    `xi` and `eta` may be `HorizontalVector`s or raw arrays. For EMBEDDED
    this evaluates only the pullback form; its vertical completion term
    vanishes identically on horizontal vectors and is skipped, which keeps
    the solver's inner products at two small products per call.
    """
    x = _unwrap(xi)
    e = _unwrap(eta)
    if metric == Metric.EUCLIDEAN:
        return float(np.sum(x * e))
    if metric == Metric.GRAM:
        return float(np.sum((x @ at.gram) * e))
    y = at.y
    yx = y.T @ x
    ye = y.T @ e
    return float(2.0 * (np.sum(yx * ye.T) + np.sum((x @ at.gram) * e)))


def metric_inner(metric, at, xi, eta):
    """Riemannian inner product g_Y(xi, eta) at the point `at`.

    `xi` and `eta` may be `HorizontalVector`s or raw arrays. Positive
    definite on the whole tangent space for every metric: for EMBEDDED the
    pullback form, which degenerates on vertical directions, is completed
    by the term tr(Y^T Y (xi^V)^T eta^V) on the vertical parameters. The
    completion vanishes on horizontal vectors, so it is skipped when both
    arguments arrive as `HorizontalVector`s.
    """
    val = horizontal_inner(metric, at, xi, eta)
    if metric != Metric.EMBEDDED or (
        isinstance(xi, HorizontalVector) and isinstance(eta, HorizontalVector)
    ):
        return val
    vx = _vertical_part(at, _unwrap(xi))
    ve = _vertical_part(at, _unwrap(eta))
    return val + float(np.sum((vx @ at.gram) * ve))


def _vertical_part(at, z):
    """Vertical component Y Omega with Omega = skew((Y^T Y)^{-1} Y^T z)."""
    gw = at.solve_gram(at.y.T @ z)
    return at.y @ (0.5 * (gw - gw.T))


def project_decompose(metric, at, ambient):
    """Split an ambient perturbation into vertical and horizontal parts.

    The vertical space at Y is {Y Omega : Omega skew-symmetric}. Under the
    EMBEDDED and GRAM metrics the vertical parameter is the skew part of
    (Y^T Y)^{-1} Y^T Z; under EUCLIDEAN it solves the Sylvester equation
    Omega (Y^T Y) + (Y^T Y) Omega = Y^T Z - Z^T Y.

    Parameters
    ----------
    metric : Metric
    at : FactorPoint
    ambient : ndarray or HorizontalVector

    Returns
    -------
    TangentDecomposition
    """
    z = _unwrap(ambient)
    y = at.y
    w = y.T @ z
    if metric == Metric.EUCLIDEAN:
        omega = spla.solve_sylvester(at.gram, at.gram, w - w.T)
        omega = 0.5 * (omega - omega.T)
    else:
        gw = at.solve_gram(w)
        omega = 0.5 * (gw - gw.T)
    vertical = y @ omega
    return TangentDecomposition(vertical=vertical, horizontal=z - vertical)


def project_horizontal(metric, at, ambient):
    """Horizontal part of an ambient perturbation, as a raw array."""
    return project_decompose(metric, at, ambient).horizontal


def retract(point, direction, step):
    """Factor retraction: the point with factor Y + step * Z.

    Raises
    ------
    ValueError
        If the stepped factor loses column rank; the caller (the line
        search) must shrink the step.
    """
    out = FactorPoint(point.y + step * _unwrap(direction))
    if not out.has_full_rank:
        raise ValueError("retraction left the manifold")
    return out


def _residual_factors(problem, y):
    """The sparse products U = A Y and V = M Y shared by all derivatives."""
    return problem.a.mat @ y, problem.m.mat @ y


def _apply_residual(problem, u, v, w):
    """Product N @ w with N = U V^T + V U^T - B B^T, never forming N."""
    b = problem.b
    return u @ (v.T @ w) + v @ (u.T @ w) - b @ (b.T @ w)


def riemannian_gradient(metric, problem, point):
    """Horizontal lift of the Riemannian gradient of the cost.

    With N Y the factored Euclidean gradient direction, the lifts are
    (I - P/2) N Y G^{-1} for EMBEDDED, 2 N Y G^{-1} for GRAM and 2 N Y for
    EUCLIDEAN. Each is horizontal for its metric without projection.

    Returns
    -------
    HorizontalVector
    """
    y = point.y
    u, v = _residual_factors(problem, y)
    ny = _apply_residual(problem, u, v, y)
    if metric == Metric.EUCLIDEAN:
        z = 2.0 * ny
    elif metric == Metric.GRAM:
        z = 2.0 * _right_gram_solve(point, ny)
    else:
        inner = ny - 0.5 * (y @ point.solve_gram(y.T @ ny))
        z = _right_gram_solve(point, inner)
    return HorizontalVector(at=point, z=z, metric=metric)


def hessian_action(metric, problem, point, eta):
    """Apply the Riemannian Hessian of the cost to a horizontal vector.

    The common main term is the second derivative of h along the ambient
    lift of eta, applied to Y:

        core = nabla^2 h[F_eta] Y = U (eta^T V) + A eta (Y^T V)
                                    + V (eta^T U) + M eta (Y^T U),

    with U = A Y, V = M Y. The metric-dependent parts are the curvature
    corrections:

    EMBEDDED   (I - P/2) core G^{-1} + (I - P) N (I - P) eta G^{-1}
    GRAM       2 core G^{-1} + P^H { N (I - P) eta G^{-1}
                                     + (I - P) N eta G^{-1}
                                     + 2 skew(eta Y^T) N Y G^{-2}
                                     + 2 skew(eta G^{-1} Y^T N) Y G^{-1} }
    EUCLIDEAN  2 core + 2 P^H { N eta }

    Skew products with n-by-n factors are expanded so only n-by-p arrays
    appear.

    Parameters
    ----------
    metric : Metric
    problem : LyapunovProblem
    point : FactorPoint
    eta : HorizontalVector or ndarray

    Returns
    -------
    HorizontalVector
    """
    e = _unwrap(eta)
    y = point.y
    u, v = _residual_factors(problem, y)
    ae = problem.a.mat @ e
    me = problem.m.mat @ e
    core = u @ (e.T @ v) + ae @ (y.T @ v) + v @ (e.T @ u) + me @ (y.T @ u)

    if metric == Metric.EUCLIDEAN:
        z = 2.0 * core + 2.0 * project_horizontal(
            metric, point, _apply_residual(problem, u, v, e)
        )
    elif metric == Metric.GRAM:
        main = 2.0 * _right_gram_solve(point, core)
        pe = e - y @ point.solve_gram(y.T @ e)
        ne = _apply_residual(problem, u, v, e)
        ny = _apply_residual(problem, u, v, y)
        correction = _apply_residual(problem, u, v, pe)
        correction += ne - y @ point.solve_gram(y.T @ ne)
        correction = _right_gram_solve(point, correction)
        # 2 skew(eta Y^T) W = eta (Y^T W) - Y (eta^T W) with W = N Y G^{-2}.
        w = _right_gram_solve(point, _right_gram_solve(point, ny))
        correction += e @ (y.T @ w) - y @ (e.T @ w)
        # 2 skew(eta G^{-1} Y^T N) Y G^{-1}
        #   = eta G^{-1} (Y^T N Y) G^{-1} - N Y (G^{-1} (eta^T Y) G^{-1}).
        s = y.T @ ny
        correction += e @ _right_gram_solve(point, point.solve_gram(s))
        correction -= ny @ _right_gram_solve(point, point.solve_gram(e.T @ y))
        z = main + project_horizontal(metric, point, correction)
    else:
        half_proj = core - 0.5 * (y @ point.solve_gram(y.T @ core))
        main = _right_gram_solve(point, half_proj)
        pe = e - y @ point.solve_gram(y.T @ e)
        npe = _apply_residual(problem, u, v, pe)
        t1 = _right_gram_solve(point, npe - y @ point.solve_gram(y.T @ npe))
        z = main + t1
    return HorizontalVector(at=point, z=z, metric=metric)


def horizontal_basis(metric, at, tol=1e-8):
    """Metric-orthonormal basis of the horizontal space at `at`.

    Intended for dense verification on small problems: projects the
    coordinate directions and orthonormalizes them against the metric with
    twice-repeated modified Gram-Schmidt. The horizontal space has dimension
    n p - p (p - 1) / 2.

    Returns
    -------
    list of ndarray
    """
    y = at.y
    n, p = y.shape
    dim = n * p - (p * (p - 1)) // 2
    basis = []
    for j in range(p):
        for i in range(n):
            cand = np.zeros((n, p))
            cand[i, j] = 1.0
            h = project_horizontal(metric, at, cand)
            scale = np.sqrt(max(metric_inner(metric, at, h, h), 0.0))
            if scale == 0.0:
                continue
            for _ in range(2):
                for b in basis:
                    h = h - metric_inner(metric, at, h, b) * b
            norm = np.sqrt(max(metric_inner(metric, at, h, h), 0.0))
            if norm > tol * scale:
                basis.append(h / norm)
    assert len(basis) == dim, f"found {len(basis)} directions, expected {dim}"
    return basis

"""Correspondence search by Gauss-Newton descent through the warp.

Given a source anchor x*, the search finds the target position xp* that
minimizes the windowed intensity cost

    E(xp*) = sum_x (I(x) - I'(f(x | x*, xp*)))^2

where f is the warp re-solved with the trial pair (x*, xp*) appended to
the weighted system. The descent direction needs df/dxp*, which chains
the quotient rule through the de-conditioning transforms and the
derivative of the least significant eigenvector:

    dh/dtheta = pinv(lambda I - S) (dS/dtheta) h

with the pseudo-inverse formed from the eigendecomposition already at
hand, truncating eigendirections whose gap from lambda is below 1e-10
of the largest gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSolveError,
    IllConditionedJacobianError,
    OutOfBoundsError,
    StepFailedError,
    UnreliableWindowError,
)
from .image import Image, sample_bilinear_many, to_grayscale
from .warp import ApapWarp, LocalHomography, _sign_canonical

_PINV_RTOL = 1e-10
_JAC_GAP_RTOL = 1e-10
_COND_LIMIT = 1e8
_MIN_USABLE = 8
_MAX_HALVINGS = 5


@dataclass(frozen=True)
class SearchConfig:
    """Window and termination parameters for the correspondence search.

    window is the odd side length of the square sampling window around
    x*; step_tol ends the iteration once the update norm drops below it;
    accept_omega is the cost ceiling for accepting a converged result;
    damping is an optional constant added to the normal matrix diagonal.
    """

    window: int = 31
    max_iters: int = 30
    step_tol: float = 0.01
    accept_omega: float = 1000.0
    damping: float = 0.0

    def __post_init__(self):
        if self.window < 5 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 5, got {self.window}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.step_tol > 0.0):
            raise ValueError(f"step_tol must be positive, got {self.step_tol}")
        if not (self.accept_omega > 0.0):
            raise ValueError(f"accept_omega must be positive, got {self.accept_omega}")
        if self.damping < 0.0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")


@dataclass(frozen=True)
class SearchResult:
    x_star: np.ndarray
    xp_star: np.ndarray
    cost: float
    iterations: int
    converged: bool
    accepted: bool
    skipped: int


def _star_weight(warp: ApapWarp, xs: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """Gaussian weight of the inserted pair at each window pixel."""
    d2 = ((xs - x_star[None, :]) ** 2).sum(axis=1)
    w = np.exp(-d2 / (2.0 * warp.config.sigma**2))
    return np.maximum(w, warp.config.gamma)


def _star_monomials(warp: ApapWarp, x_star: np.ndarray, xp_star: np.ndarray):
    """Constraint rows of the inserted pair on conditioned coordinates.

    Returns (m_star (2, 9), c_star (3,)) where c_star is the conditioned
    homogeneous source anchor.
    """
    c_star = warp.t_src @ np.array([x_star[0], x_star[1], 1.0])
    d_star = warp.t_dst @ np.array([xp_star[0], xp_star[1], 1.0])
    ppc, qpc = d_star[0], d_star[1]
    m = np.zeros((2, 9))
    m[0, 3:6] = -c_star
    m[0, 6:9] = qpc * c_star
    m[1, 0:3] = c_star
    m[1, 6:9] = -ppc * c_star
    return m, c_star


def _augmented_eigs(warp: ApapWarp, s_base: np.ndarray, wstar2: np.ndarray, m_star: np.ndarray):
    """Eigendecompositions of S + w*^2 m*^T m* for a batch of base systems."""
    s = s_base + wstar2[:, None, None] * (m_star.T @ m_star)
    evals, evecs = np.linalg.eigh(s)
    trace = evals.sum(axis=-1)
    ok = (evals[:, 1] - evals[:, 0]) > 1e-12 * np.maximum(trace, 0.0)
    ok &= trace > 0.0
    h = _sign_canonical(evecs[:, :, 0])
    return h, evals, evecs, ok


def augmented_solve(warp: ApapWarp, x, x_star, xp_star) -> LocalHomography:
    """Local solve at x with the candidate pair (x_star, xp_star) inserted."""
    x = np.asarray(x, dtype=np.float64).reshape(2)
    x_star = np.asarray(x_star, dtype=np.float64).reshape(2)
    xp_star = np.asarray(xp_star, dtype=np.float64).reshape(2)
    xs = x.reshape(1, 2)
    w = warp.weights_many(xs)
    s_base = warp.accumulate(w * w)
    wstar2 = _star_weight(warp, xs, x_star) ** 2
    m_star, _ = _star_monomials(warp, x_star, xp_star)
    h, evals, _, ok = _augmented_eigs(warp, s_base, wstar2, m_star)
    if not ok[0]:
        raise DegenerateSolveError(f"augmented system at ({x[0]}, {x[1]}) is rank deficient")
    matrix = warp._decondition(h)[0]
    return LocalHomography(h=h[0], lam=float(max(evals[0, 0], 0.0)), matrix=matrix)


def _eval_points(warp: ApapWarp, h: np.ndarray, cpix: np.ndarray):
    """Warp conditioned window pixels through per-pixel coefficient vectors.

    Returns (f (P, 2), v (P, 3), den_ok) with v the de-conditioned
    homogeneous images (needed again by the Jacobian).
    """
    hc = h.reshape(-1, 3, 3)
    u = np.einsum("pij,pj->pi", hc, cpix)
    v = u @ warp.t_dst_inv.T
    den_ok = np.abs(v[:, 2]) >= 1e-12
    den = np.where(den_ok, v[:, 2], 1.0)
    f = v[:, :2] / den[:, None]
    return f, v, den_ok


def _jacobian_many(
    warp: ApapWarp,
    cpix: np.ndarray,
    wstar2: np.ndarray,
    m_star: np.ndarray,
    c_star: np.ndarray,
    h: np.ndarray,
    evals: np.ndarray,
    evecs: np.ndarray,
    v: np.ndarray,
):
    """df/dxp* at each window pixel, shape (P, 2, 2), plus a validity mask.

    Entry [p, :, k] is the derivative of f at pixel p with respect to the
    k-th raw coordinate of xp*.
    """
    p_count = cpix.shape[0]
    s_dst = warp.t_dst[0, 0]

    # dS/dxp* contracted with h. The constraint rows depend linearly on
    # the conditioned target coordinates, so each derivative is a
    # symmetric rank-2 update.
    g_p = np.zeros((2, 9))
    g_p[1, 6:9] = -c_star
    g_q = np.zeros((2, 9))
    g_q[0, 6:9] = c_star
    t_p = g_p.T @ m_star + m_star.T @ g_p
    t_q = g_q.T @ m_star + m_star.T @ g_q
    scale = s_dst * wstar2
    u_p = scale[:, None] * (h @ t_p)
    u_q = scale[:, None] * (h @ t_q)

    # Pseudo-inverse of (lambda I - S) through the existing factorization.
    lam = evals[:, 0]
    denom = lam[:, None] - evals
    cutoff = _PINV_RTOL * np.abs(denom).max(axis=1, keepdims=True)
    keep = np.abs(denom) > cutoff
    g = np.where(keep, 1.0 / np.where(keep, denom, 1.0), 0.0)

    def pinv_apply(u):
        t = np.einsum("pjk,pj->pk", evecs, u)
        return np.einsum("pik,pk->pi", evecs, g * t)

    dh = np.stack([pinv_apply(u_p), pinv_apply(u_q)], axis=2)  # (P, 9, 2)

    # df/dh through the projective quotient and de-conditioning.
    den = v[:, 2]
    safe = np.abs(den) >= 1e-12
    den = np.where(safe, den, 1.0)
    a = np.zeros((p_count, 2, 3))
    a[:, 0, 0] = 1.0 / den
    a[:, 1, 1] = 1.0 / den
    a[:, 0, 2] = -v[:, 0] / (den * den)
    a[:, 1, 2] = -v[:, 1] / (den * den)
    m2 = a @ warp.t_dst_inv  # (P, 2, 3)
    dfdh = np.einsum("prj,pk->prjk", m2, cpix).reshape(p_count, 2, 9)

    jac = np.einsum("prn,pnd->prd", dfdh, dh)

    trace = evals.sum(axis=1)
    gap_ok = (evals[:, 1] - evals[:, 0]) > _JAC_GAP_RTOL * np.maximum(trace, 0.0)
    return jac, gap_ok & safe


def warp_jacobian(warp: ApapWarp, x, x_star, xp_star) -> np.ndarray:
    """Analytic df/dxp* of the augmented warp at a single point x."""
    x = np.asarray(x, dtype=np.float64).reshape(2)
    x_star = np.asarray(x_star, dtype=np.float64).reshape(2)
    xp_star = np.asarray(xp_star, dtype=np.float64).reshape(2)
    xs = x.reshape(1, 2)
    w = warp.weights_many(xs)
    s_base = warp.accumulate(w * w)
    wstar2 = _star_weight(warp, xs, x_star) ** 2
    m_star, c_star = _star_monomials(warp, x_star, xp_star)
    h, evals, evecs, ok = _augmented_eigs(warp, s_base, wstar2, m_star)
    if not ok[0]:
        raise DegenerateSolveError(f"augmented system at ({x[0]}, {x[1]}) is rank deficient")
    cpix = (warp.t_src @ np.array([x[0], x[1], 1.0])).reshape(1, 3)
    _, v, den_ok = _eval_points(warp, h, cpix)
    if not den_ok[0]:
        raise IllConditionedJacobianError(f"warp sends ({x[0]}, {x[1]}) to infinity")
    jac, jac_ok = _jacobian_many(warp, cpix, wstar2, m_star, c_star, h, evals, evecs, v)
    if not jac_ok[0]:
        raise IllConditionedJacobianError(
            "eigenvalue gap too small for a reliable derivative"
        )
    return jac[0]


class _SearchProblem:
    """Per-anchor precomputation shared by every candidate evaluation."""

    def __init__(self, image_src: Image, image_dst: Image, warp: ApapWarp, x_star, config: SearchConfig, grads=None):
        self.warp = warp
        self.config = config
        self.x_star = np.asarray(x_star, dtype=np.float64).reshape(2)

        src = to_grayscale(image_src).data
        dst = to_grayscale(image_dst).data
        half = config.window // 2
        cx = int(np.rint(self.x_star[0]))
        cy = int(np.rint(self.x_star[1]))
        h, w = src.shape
        if not (half <= cx < w - half and half <= cy < h - half):
            raise OutOfBoundsError(
                f"window of {config.window} around ({self.x_star[0]}, {self.x_star[1]}) "
                f"leaves the {w}x{h} source frame"
            )
        gx, gy = np.meshgrid(
            np.arange(cx - half, cx + half + 1, dtype=np.float64),
            np.arange(cy - half, cy + half + 1, dtype=np.float64),
        )
        self.xs = np.column_stack([gx.ravel(), gy.ravel()])
        self.intensities = src[cy - half : cy + half + 1, cx - half : cx + half + 1].ravel()
        self.dst = dst
        if grads is None:
            grads = np.gradient(dst, axis=1), np.gradient(dst, axis=0)
        self.grad_x, self.grad_y = grads

        wts = warp.weights_many(self.xs)
        self.s_base = warp.accumulate(wts * wts)
        self.wstar2 = _star_weight(warp, self.xs, self.x_star) ** 2
        ones = np.ones((self.xs.shape[0], 1))
        self.cpix = np.hstack([self.xs, ones]) @ warp.t_src.T

    def evaluate(self, xp_star: np.ndarray) -> "_Candidate":
        m_star, c_star = _star_monomials(self.warp, self.x_star, xp_star)
        h, evals, evecs, ok = _augmented_eigs(self.warp, self.s_base, self.wstar2, m_star)
        f, v, den_ok = _eval_points(self.warp, h, self.cpix)
        vals, inside = sample_bilinear_many(self.dst, f[:, 0], f[:, 1])
        usable = ok & den_ok & inside
        total = usable.size
        skipped = total - int(usable.sum())
        if skipped > total // 2:
            raise UnreliableWindowError(
                f"{skipped} of {total} window pixels unusable at ({xp_star[0]:.2f}, {xp_star[1]:.2f})"
            )
        residual = np.where(usable, self.intensities - vals, 0.0)
        cost = float((residual * residual).sum())
        return _Candidate(
            xp_star=np.array(xp_star, dtype=np.float64),
            cost=cost,
            skipped=skipped,
            m_star=m_star,
            c_star=c_star,
            h=h,
            evals=evals,
            evecs=evecs,
            f=f,
            v=v,
            usable=usable,
            residual=residual,
        )

    def step(self, cand: "_Candidate") -> np.ndarray:
        """One Gauss-Newton update of xp* from the candidate's residuals."""
        jac, jac_ok = _jacobian_many(
            self.warp,
            self.cpix,
            self.wstar2,
            cand.m_star,
            cand.c_star,
            cand.h,
            cand.evals,
            cand.evecs,
            cand.v,
        )
        use = cand.usable & jac_ok
        if int(use.sum()) < _MIN_USABLE:
            raise StepFailedError("too few usable pixels for a descent step")
        gxv, _ = sample_bilinear_many(self.grad_x, cand.f[use, 0], cand.f[use, 1])
        gyv, _ = sample_bilinear_many(self.grad_y, cand.f[use, 0], cand.f[use, 1])
        grad = np.column_stack([gxv, gyv])
        rows = np.einsum("pi,pid->pd", grad, jac[use])
        normal = rows.T @ rows
        rhs = rows.T @ cand.residual[use]
        normal = normal + self.config.damping * np.eye(2)
        cond = np.linalg.cond(normal)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            normal = normal + 1e-3 * np.trace(normal) * np.eye(2)
        try:
            delta = np.linalg.solve(normal, rhs)
        except np.linalg.LinAlgError:
            raise StepFailedError("normal matrix is singular") from None
        if not np.all(np.isfinite(delta)):
            raise StepFailedError("non-finite descent step")
        return delta


@dataclass(frozen=True)
class _Candidate:
    xp_star: np.ndarray
    cost: float
    skipped: int
    m_star: np.ndarray
    c_star: np.ndarray
    h: np.ndarray
    evals: np.ndarray
    evecs: np.ndarray
    f: np.ndarray
    v: np.ndarray
    usable: np.ndarray
    residual: np.ndarray


def matching_cost(image_src: Image, image_dst: Image, warp: ApapWarp, x_star, xp_star, config: SearchConfig | None = None):
    """Windowed intensity cost of a candidate pair; returns (cost, skipped).

    Warped samples landing outside the target are skipped; more than half
    of the window skipped raises UnreliableWindowError.
    """
    config = config if config is not None else SearchConfig()
    problem = _SearchProblem(image_src, image_dst, warp, x_star, config)
    cand = problem.evaluate(np.asarray(xp_star, dtype=np.float64).reshape(2))
    return cand.cost, cand.skipped


def search_correspondence(
    image_src: Image,
    image_dst: Image,
    warp: ApapWarp,
    x_star,
    config: SearchConfig | None = None,
    grads=None,
) -> SearchResult:
    """Iteratively refine the target position of a source anchor.

    Starts from the unaugmented warp's prediction and applies damped
    Gauss-Newton steps with up to five halvings per step, each accepted
    only if the cost strictly decreases. The run converges when a full
    proposed step falls below step_tol; the result is accepted when it
    converged with final cost below accept_omega. Numerical failures end
    the run as not converged instead of raising.
    """
    config = config if config is not None else SearchConfig()
    x_star = np.asarray(x_star, dtype=np.float64).reshape(2)
    problem = _SearchProblem(image_src, image_dst, warp, x_star, config, grads=grads)

    xp = warp.eval(x_star)
    try:
        cand = problem.evaluate(xp)
    except UnreliableWindowError:
        return SearchResult(
            x_star=x_star,
            xp_star=xp,
            cost=float("inf"),
            iterations=0,
            converged=False,
            accepted=False,
            skipped=-1,
        )

    converged = False
    iterations = 0
    for _ in range(config.max_iters):
        iterations += 1
        try:
            delta = problem.step(cand)
        except StepFailedError:
            break
        if float(np.linalg.norm(delta)) < config.step_tol:
            converged = True
            break
        moved = False
        for k in range(_MAX_HALVINGS + 1):
            trial_xp = cand.xp_star + delta * (0.5**k)
            try:
                trial = problem.evaluate(trial_xp)
            except UnreliableWindowError:
                continue
            if trial.cost < cand.cost:
                cand = trial
                moved = True
                break
        if not moved:
            break

    accepted = converged and cand.cost < config.accept_omega
    return SearchResult(
        x_star=x_star,
        xp_star=cand.xp_star,
        cost=cand.cost,
        iterations=iterations,
        converged=converged,
        accepted=accepted,
        skipped=cand.skipped,
    )

"""Executable Gaussian conditioning and preactivation-shift coefficients.

A Gaussian matrix conditioned on how it acts on fixed row/column spaces
stays Gaussian: the conditioned blocks are kept verbatim and the rest is
redrawn.  conditional_resample implements exactly that, and the
coefficient extractors use it to realize the fresh directions that the
perturbed preactivation decomposes along:

    g_m^s = (1 - mu_m) g_m - beta_m eta_m - gamma_m u_m

with u_m a standard Gaussian independent of the rest.  beta here always
multiplies eta_m directly; in the depth-1 notation where the step ratio
is quoted per sqrt(width), that is beta * sqrt(m).

Two routes to the coefficients are provided on purpose.  The definitional
route draws the fresh matrix explicitly, so it matches the true g^s in
distribution but not per realization; the regression route projects the
observed shift onto span{g, eta} and is exact by construction.  Tests
compare them only in distribution.
"""

import dataclasses
import math

import numpy as np

from .activations import eval_activation
from .network import eta_chain, forward
from .numerics import (
    SummaryStats,
    ensure_finite,
    normality_check,
    sample_gaussian_matrix,
    summarize,
)

# Near-dependent vectors are dropped during basis construction below this
# relative norm.
BASIS_TOL = 1e-12

ORTHONORMALITY_TOL = 1e-10

DEGENERATE_NORM = 1e-14


def _orthonormal_columns(vectors, n, label):
    """Modified Gram-Schmidt with one reorthogonalization pass.

    vectors: iterable of 1-D arrays of length n (may be empty or None).
    Returns an (n, k) array with orthonormal columns spanning the same
    space; near-dependent inputs are dropped, which leaves the spanned
    subspace (the only thing conditioning sees) unchanged.
    """
    cols = []
    for vec in vectors if vectors is not None else ():
        v = np.asarray(vec, dtype=np.float64).ravel()
        if v.size != n:
            raise ValueError(
                f"{label} vector has length {v.size}, expected {n}")
        ensure_finite(v, f"{label} vector")
        scale = float(np.linalg.norm(v))
        if scale == 0.0:
            continue
        for _ in range(2):
            for q in cols:
                v = v - q * (q @ v)
        norm = float(np.linalg.norm(v))
        if norm <= BASIS_TOL * scale:
            continue
        cols.append(v / norm)
    if not cols:
        return np.zeros((n, 0))
    return np.column_stack(cols)


@dataclasses.dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Row/column spaces a resample must respect, as orthonormal bases.

    left_basis is (rows, k_l), right_basis is (cols, k_r); either may have
    zero columns.  A complement flag flips which side of the split is
    preserved: with left_complement=True the matrix is kept on the
    orthogonal complement of the spanned rows and redrawn on the span
    itself, and likewise on the right.
    """

    left_basis: np.ndarray
    right_basis: np.ndarray
    left_complement: bool = False
    right_complement: bool = False

    def __post_init__(self):
        for q, side in ((self.left_basis, "left"), (self.right_basis, "right")):
            if q.shape[1] == 0:
                continue
            defect = float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))
            if defect > ORTHONORMALITY_TOL:
                raise ValueError(
                    f"{side} basis fails orthonormality ({defect:.3e})")

    @classmethod
    def condition_on(cls, rows, cols, left=None, right=None,
                     left_complement=False, right_complement=False):
        return cls(
            left_basis=_orthonormal_columns(left, rows, "left"),
            right_basis=_orthonormal_columns(right, cols, "right"),
            left_complement=left_complement,
            right_complement=right_complement,
        )

    @classmethod
    def unconditioned(cls, rows, cols):
        """Empty pair: nothing preserved, the whole matrix is redrawn."""
        return cls.condition_on(rows, cols)

    def check_shape(self, rows, cols):
        if self.left_basis.shape[0] != rows or self.right_basis.shape[0] != cols:
            raise ValueError(
                f"pair built for {self.left_basis.shape[0]}x"
                f"{self.right_basis.shape[0]}, matrix is {rows}x{cols}")

    def left_projector(self, rows):
        """Dense projector onto the preserved left space (tests only)."""
        p = self.left_basis @ self.left_basis.T
        return np.eye(rows) - p if self.left_complement else p

    def right_projector(self, cols):
        p = self.right_basis @ self.right_basis.T
        return np.eye(cols) - p if self.right_complement else p


def _span_part(q, mat, side):
    if side == "left":
        return q @ (q.T @ mat)
    return (mat @ q) @ q.T


def _apply_preserved(q, complement, mat, side):
    span = _span_part(q, mat, side)
    return mat - span if complement else span


def _apply_fresh(q, complement, mat, side):
    span = _span_part(q, mat, side)
    return span if complement else mat - span


@dataclasses.dataclass(frozen=True, eq=False)
class ResampleOutput:
    matrix: np.ndarray  # the resampled X'
    left_block: np.ndarray  # preserved P_l X
    right_block: np.ndarray  # preserved X P_r
    corner_block: np.ndarray  # preserved P_l X P_r
    fresh_entries: np.ndarray  # redrawn block rotated back to i.i.d. coordinates
    fresh_stats: SummaryStats | None


def _fresh_side_basis(q, complement):
    # Returns the orthonormal basis of the redrawn subspace, or None when
    # it is the whole space (no rotation needed).  QR completion supplies
    # the complement columns.
    k = q.shape[1]
    if k == 0:
        return np.zeros((q.shape[0], 0)) if complement else None
    if complement:
        return q
    full, _ = np.linalg.qr(q, mode="complete")
    return full[:, k:]


def conditional_resample(x_mat, pair, stream, variance):
    """Redraw X off the preserved spaces: X' = X + F_l (X~ - X) F_r.

    F_l, F_r project onto the redrawn subspaces (complements of the
    preserved ones), X~ is a fresh i.i.d. N(0, variance) draw from
    stream.  Preserved blocks are carried over bitwise; fresh_entries is
    the redrawn block expressed in rotated coordinates where its entries
    are again i.i.d. N(0, variance).
    """
    x_mat = np.asarray(x_mat, dtype=np.float64)
    if x_mat.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={x_mat.ndim}")
    rows, cols = x_mat.shape
    pair.check_shape(rows, cols)
    if not variance > 0.0:
        raise ValueError(f"variance must be positive, got {variance}")
    tilde = sample_gaussian_matrix(stream, rows, cols, variance)

    ql, qr = pair.left_basis, pair.right_basis
    lc, rc = pair.left_complement, pair.right_complement
    no_left = ql.shape[1] == 0 and not lc
    no_right = qr.shape[1] == 0 and not rc
    redraw_left = ql.shape[1] if lc else rows - ql.shape[1]
    redraw_right = qr.shape[1] if rc else cols - qr.shape[1]
    if no_left and no_right:
        # Nothing preserved: X' is the fresh draw itself.
        new = tilde
    elif redraw_left == 0 or redraw_right == 0:
        # Redrawn subspace is empty on one side: X is preserved bitwise
        # rather than through a projector round trip.
        new = x_mat.copy()
    else:
        diff = _apply_fresh(ql, lc, tilde - x_mat, "left")
        diff = _apply_fresh(qr, rc, diff, "right")
        new = x_mat + diff

    left_block = _apply_preserved(ql, lc, x_mat, "left")
    right_block = _apply_preserved(qr, rc, x_mat, "right")
    corner_block = _apply_preserved(qr, rc, left_block, "right")

    bl = _fresh_side_basis(ql, lc)
    br = _fresh_side_basis(qr, rc)
    fresh = tilde
    if bl is not None:
        fresh = bl.T @ fresh
    if br is not None:
        fresh = fresh @ br
    stats = summarize(fresh.ravel()) if fresh.size else None
    return ResampleOutput(
        matrix=new,
        left_block=left_block,
        right_block=right_block,
        corner_block=corner_block,
        fresh_entries=fresh,
        fresh_stats=stats,
    )


@dataclasses.dataclass(frozen=True)
class LayerStats:
    """Per-layer decomposition coefficients and the limit diagnostics.

    overlap and residual describe how sigma(g_m^s) sits relative to h_m;
    they feed the next row's mu and gamma.  delta_next is the conditioning
    correction for the following layer, None on the last row.
    """

    layer: int
    mu: float
    beta: float
    gamma: float
    nu: float  # sqrt(||h_{m-1}||^2 / d_{m-1})
    eta_norm: float
    y_norm: float
    overlap: float
    residual: float
    delta_next: float | None

    def __post_init__(self):
        if self.gamma < 0.0 or self.residual < 0.0 or not self.nu > 0.0:
            raise ValueError("layer statistics out of range")


@dataclasses.dataclass(frozen=True, eq=False)
class TwoLayerCoefficients:
    """Depth-1 coefficients via both routes.

    stats holds the definitional values (mu and gamma exact, beta through
    one conditional resample); mu_hat/beta_hat/gamma_hat come from
    regressing g^s - g on span{g, eta}, with u_hat the normalized
    regression residual.  recon_rel_err is the regression route's
    reconstruction error and is tiny by construction.
    """

    stats: LayerStats
    tau: float
    s_d: float
    mu_hat: float
    beta_hat: float
    gamma_hat: float
    u: np.ndarray
    u_hat: np.ndarray
    u_ks: float
    recon_rel_err: float
    degenerate: bool


def _overlap_residual(h, h_shift, width, strict=True):
    hh = float(h @ h)
    if hh < DEGENERATE_NORM:
        if strict:
            raise ValueError("dead layer: ||h|| = 0")
        return math.nan, math.nan
    overlap = float(h @ h_shift) / hh
    resid_vec = h_shift - overlap * h
    return overlap, float(resid_vec @ resid_vec) / width


def two_layer_coefficients(net, act, x, s_d, stream):
    """Attack a depth-1 network and extract (mu, beta, gamma) both ways."""
    if net.n_layers != 1:
        raise ValueError(f"expected depth 1, got {net.n_layers}")
    if not s_d > 0.0:
        raise ValueError(f"step size must be positive, got {s_d}")
    w_mat, a_vec = net.two_layer
    d, m = net.dims[0], net.dims[1]
    trace = forward(net, act, x, normalize=True)
    xn = trace.x
    g = trace.preactivations[0]
    h = trace.postactivations[1]
    eta = trace.derivative_diags[0] * a_vec
    grad = w_mat.T @ eta
    tau = 1.0 if trace.output >= 0.0 else -1.0
    eta_sq = float(eta @ eta)

    degenerate = eta_sq < DEGENERATE_NORM
    x_s = xn if degenerate else xn - (tau * s_d) * grad
    g_s = w_mat @ x_s
    overlap, residual = _overlap_residual(
        h, eval_activation(act, g_s), m, strict=False)

    if degenerate:
        stats = LayerStats(
            layer=1, mu=0.0, beta=0.0, gamma=0.0, nu=1.0,
            eta_norm=0.0, y_norm=float(np.linalg.norm(grad)),
            overlap=overlap, residual=residual, delta_next=None,
        )
        zeros = np.zeros(m)
        return TwoLayerCoefficients(
            stats=stats, tau=tau, s_d=s_d, mu_hat=0.0, beta_hat=0.0,
            gamma_hat=0.0, u=zeros, u_hat=zeros, u_ks=math.nan,
            recon_rel_err=0.0, degenerate=True,
        )

    mu = tau * s_d * float(g @ eta) / d
    v = grad - (float(xn @ grad) / d) * xn  # projection of grad off x
    v_sq = float(v @ v)
    gamma = s_d / math.sqrt(d) * math.sqrt(v_sq)

    # Definitional beta and fresh direction: the matrix acting on v is
    # replaced by a fully fresh copy (v is orthogonal to x, so nothing of
    # the conditioned action survives).
    pair = ProjectionPair.unconditioned(m, d)
    fresh = conditional_resample(w_mat, pair, stream, variance=1.0 / d)
    wv = fresh.matrix @ v
    beta = tau * s_d * (v_sq - float(eta @ wv)) / eta_sq
    v_norm = math.sqrt(v_sq)
    u = np.zeros(m) if v_norm < DEGENERATE_NORM \
        else (math.sqrt(d) * tau / v_norm) * wv

    # Regression route: least squares of the observed shift on {g, eta},
    # normal equations on the 2x2 Gram matrix.
    r = g_s - g
    gram = np.array([[float(g @ g), float(g @ eta)],
                     [float(g @ eta), eta_sq]])
    rhs = np.array([float(g @ r), float(eta @ r)])
    coef = np.linalg.solve(gram, rhs)
    mu_hat, beta_hat = -float(coef[0]), -float(coef[1])
    rho = r - coef[0] * g - coef[1] * eta
    rho_norm = float(np.linalg.norm(rho))
    if rho_norm < DEGENERATE_NORM:
        gamma_hat, u_hat = 0.0, np.zeros(m)
    else:
        gamma_hat = rho_norm / math.sqrt(m)
        # minus: the model writes the residual term as -gamma*u
        u_hat = -(math.sqrt(m) / rho_norm) * rho
    recon = (1.0 - mu_hat) * g - beta_hat * eta - gamma_hat * u_hat
    recon_rel_err = float(np.linalg.norm(recon - g_s) / np.linalg.norm(g_s))
    u_ks = normality_check(u_hat)[0] if m >= 30 and rho_norm >= DEGENERATE_NORM \
        else math.nan

    stats = LayerStats(
        layer=1, mu=mu, beta=beta, gamma=gamma, nu=1.0,
        eta_norm=math.sqrt(eta_sq), y_norm=float(np.linalg.norm(grad)),
        overlap=overlap, residual=residual, delta_next=None,
    )
    return TwoLayerCoefficients(
        stats=stats, tau=tau, s_d=s_d, mu_hat=mu_hat, beta_hat=beta_hat,
        gamma_hat=gamma_hat, u=u, u_hat=u_hat, u_ks=u_ks,
        recon_rel_err=recon_rel_err, degenerate=False,
    )


def multilayer_layer_stats(net, act, x, rule, stream):
    """Run the attack through a deep net and report LayerStats per layer.

    Row m covers preactivation m: mu and gamma are exact for m=1 and
    follow the overlap/residual recursion afterwards; beta is always the
    projection of the observed shift onto eta_m.  delta_next on row m is
    the conditioning correction for row m+1, estimated with one resample
    of W_{m+1} redrawn on span{h_m}.
    """
    from .attack import StepRule

    if isinstance(rule, StepRule):
        s_d, _ = rule.resolve(act, net.dims[0], net.dims[1])
    else:
        s_d = float(rule)
    if not s_d > 0.0:
        raise ValueError(f"step size must be positive, got {s_d}")

    l = net.n_layers
    trace = forward(net, act, x, normalize=True)
    chain = eta_chain(net, trace)
    grad = chain.ys[0]
    tau = 1.0 if trace.output >= 0.0 else -1.0
    x_s = trace.x - (tau * s_d) * grad

    # Perturbed preactivation chain, same weights.
    g_shift = []
    carrier = x_s
    for w in net.weights[:-1]:
        g_shift.append(w @ carrier)
        carrier = eval_activation(act, g_shift[-1])

    rows = []
    prev_overlap = None
    prev_residual = None
    for m in range(1, l + 1):
        g = trace.preactivations[m - 1]
        h_prev = trace.postactivations[m - 1]
        h = trace.postactivations[m]
        eta = chain.etas[m - 1]
        eta_sq = float(eta @ eta)
        if eta_sq < DEGENERATE_NORM:
            raise ValueError(f"degenerate backward chain: ||eta_{m}|| = 0")
        width = net.dims[m]

        if m == 1:
            mu = tau * s_d * float(g @ eta) / net.dims[0]
            v = grad - (float(trace.x @ grad) / net.dims[0]) * trace.x
            gamma = s_d / math.sqrt(net.dims[0]) * float(np.linalg.norm(v))
        else:
            mu = 1.0 - prev_overlap
            gamma = math.sqrt(prev_residual)
        beta = float(((1.0 - mu) * g - g_shift[m - 1]) @ eta) / eta_sq

        overlap, residual = _overlap_residual(
            h, eval_activation(act, g_shift[m - 1]), width)

        delta_next = None
        if m < l:
            w_next = net.weights[m]
            pair = ProjectionPair.condition_on(
                rows=w_next.shape[0], cols=w_next.shape[1],
                right=[h], right_complement=True)
            redraw = conditional_resample(
                w_next, pair, stream.substream(f"delta{m + 1}"),
                variance=1.0 / width)
            eta_next = chain.etas[m]
            shift = (w_next.T @ eta_next) - (redraw.matrix.T @ eta_next)
            delta_next = float(h @ shift) / float(h @ h)

        nu = float(np.linalg.norm(h_prev)) / math.sqrt(net.dims[m - 1])
        rows.append(LayerStats(
            layer=m, mu=mu, beta=beta, gamma=gamma, nu=nu,
            eta_norm=math.sqrt(eta_sq),
            y_norm=float(np.linalg.norm(chain.ys[m - 1])),
            overlap=overlap, residual=residual, delta_next=delta_next,
        ))
        prev_overlap, prev_residual = overlap, residual
    return rows


@dataclasses.dataclass(frozen=True, eq=False)
class GradientDecomposition:
    alpha_parallel: float
    alpha_perp: float
    residual_ks: float  # KS statistic of the rotated residual / alpha_perp
    residual_norm_sq: float
    residual_moments: tuple


def gradient_direction_decomposition(net, act, x):
    """Split the depth-1 gradient into its x-aligned and orthogonal parts.

    alpha_parallel = <x, grad>/d, alpha_perp^2 = ||eta||^2/d; the residual
    grad - alpha_parallel x, rotated off x and divided by alpha_perp, is
    exactly standard Gaussian and is handed to normality_check.
    """
    if net.n_layers != 1:
        raise ValueError(f"expected depth 1, got {net.n_layers}")
    w_mat, a_vec = net.two_layer
    d = net.dims[0]
    trace = forward(net, act, x, normalize=True)
    xn = trace.x
    eta = trace.derivative_diags[0] * a_vec
    grad = w_mat.T @ eta
    alpha_parallel = float(xn @ grad) / d
    alpha_perp = float(np.linalg.norm(eta)) / math.sqrt(d)
    v = grad - alpha_parallel * xn

    if alpha_perp * math.sqrt(d) < DEGENERATE_NORM or d < 31:
        return GradientDecomposition(
            alpha_parallel=alpha_parallel, alpha_perp=alpha_perp,
            residual_ks=math.nan, residual_norm_sq=float(v @ v),
            residual_moments=(math.nan,) * 4,
        )
    full, _ = np.linalg.qr(xn.reshape(-1, 1), mode="complete")
    rotated = (full[:, 1:].T @ v) / alpha_perp
    ks, moments = normality_check(rotated)
    return GradientDecomposition(
        alpha_parallel=alpha_parallel, alpha_perp=alpha_perp,
        residual_ks=ks, residual_norm_sq=float(v @ v),
        residual_moments=moments,
    )

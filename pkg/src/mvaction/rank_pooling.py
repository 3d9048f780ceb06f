"""Sub-segment extraction and rank-pooled dynamic maps.

A video is cut into a fixed number ``H`` of temporal windows whose size and
stride adapt to the video length. Within each window a linear ranking
function ``psi(v) = u . v`` is fitted so that later frames score higher; the
parameter vector ``u``, reshaped to the frame geometry, is the window's
dynamic map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import VideoSequence
from .errors import NumericError, ValidationError


@dataclass(frozen=True)
class WindowPlan:
    num_frames: int        # after padding
    num_windows: int
    threshold: float
    window: int
    stride: int
    starts: tuple          # 1-based start index of every window
    padded_from: int       # original length (== num_frames unless padded)

    @property
    def windows(self) -> list:
        """1-based inclusive ``(start, end)`` pairs."""
        return [(s, s + self.window - 1) for s in self.starts]

    def slices(self) -> list:
        return [slice(s - 1, s - 1 + self.window) for s in self.starts]


def compute_window_plan(num_frames: int, num_windows: int, threshold: float) -> WindowPlan:
    """Adaptive window size and stride for a fixed window count.

    Short sequences (``F < threshold``) get overlapping windows of size
    ``F - (H - 1)`` at stride 1; long ones get ``floor(F / H)``-sized
    windows laid end to end. Sequences shorter than ``H`` are padded by
    repeating their last frame.
    """
    if int(num_frames) != num_frames or num_frames < 1:
        raise ValidationError(f"frame count must be a positive integer, got {num_frames}")
    if int(num_windows) != num_windows or num_windows < 1:
        raise ValidationError(f"window count must be a positive integer, got {num_windows}")
    if not threshold > num_windows:
        raise ValidationError(f"threshold {threshold} must exceed the window count {num_windows}")
    original = int(num_frames)
    F, H = max(original, int(num_windows)), int(num_windows)
    if F < threshold:
        w, s = F - (H - 1), 1
    else:
        w = F // H
        s = w
    starts = tuple(1 + k * s for k in range(H))
    return WindowPlan(F, H, threshold, w, s, starts, original)


def smooth_segment(seg, mode: str = "running_mean") -> np.ndarray:
    """``running_mean`` replaces frame t with the mean of frames 1..t."""
    seg = np.asarray(seg, dtype=np.float64)
    if mode in (None, "none"):
        return seg
    if mode != "running_mean":
        raise ValidationError(f"unknown smoothing mode {mode!r}")
    counts = np.arange(1, seg.shape[0] + 1).reshape((-1,) + (1,) * (seg.ndim - 1))
    return np.cumsum(seg, axis=0) / counts


@dataclass(frozen=True, eq=False)
class DynamicMap:
    u: np.ndarray                 # ranking parameters in input feature units
    index: int                    # segment position h
    converged: bool = True
    single_frame: bool = False
    image: np.ndarray | None = None   # u reshaped to frame geometry, min-max scaled to [0, 1]
    iterations: int = 0


def _prepare(seg):
    X = np.asarray(seg, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    X = X.reshape(X.shape[0], -1)
    if not np.all(np.isfinite(X)):
        raise NumericError("segment contains non-finite features")
    Xc = X - X.mean(axis=0)
    # one global scale keeps the fit invariant to multiplying all features by a constant
    rho = float(np.sqrt(np.mean(Xc ** 2)))
    return X, Xc, rho


def _dual_violation(G, beta, epsilon):
    gp, gn = G + epsilon, G - epsilon
    viol = np.where(beta > 0, np.abs(gp), np.where(beta < 0, np.abs(gn), np.maximum(np.maximum(gn, -gp), 0.0)))
    return float(viol.max(initial=0.0))


def _active_set_solve(Q, y, lam, beta, epsilon, tol, rounds=10):
    """Exact dual solution grown from the sign pattern of ``beta``, or None if no round passes the KKT check."""
    s = np.sign(beta)
    for _ in range(rounds):
        S = np.flatnonzero(s)
        if S.size == 0:
            return None
        cand = np.zeros_like(beta)
        try:
            cand[S] = np.linalg.solve(Q[np.ix_(S, S)] + lam * np.eye(S.size), y[S] - epsilon * s[S])
        except np.linalg.LinAlgError:
            return None
        G = Q @ cand - y + lam * cand
        # without a tube the sign of a support entry does not enter the equations
        consistent = epsilon == 0 or np.all(np.sign(cand[S]) == s[S])
        # round-off in the solve grows with the size of the dual variables
        scale = 1.0 + float(np.abs(Q).max()) * float(np.abs(cand).max())
        if consistent and _dual_violation(G, cand, epsilon) < tol * scale:
            return cand
        # drop entries that changed sign, add zeros whose gradient leaves the tube
        s_next = np.sign(cand) if epsilon == 0 else np.where(np.sign(cand) == s, s, 0.0)
        s_next[(s == 0) & (G + epsilon < 0)] = 1.0
        s_next[(s == 0) & (G - epsilon > 0)] = -1.0
        if np.array_equal(s_next, s):
            return None
        s = s_next
    return None


def svr_dual_cd(X, y, C=1.0, epsilon=0.1, max_iter=1000, tol=1e-6, seed=0, refine_every=10):
    """Linear L2-loss epsilon-insensitive SVR by dual coordinate descent.

    Minimises ``0.5*||u||^2 + C * sum_t max(0, |y_t - u.x_t| - epsilon)^2``
    through its dual ``0.5*b'(Q + I/(2C))b - y'b + epsilon*|b|_1`` with
    ``Q = X X'`` and ``u = X'b``. For large C the dual is badly conditioned,
    so every ``refine_every`` epochs the support found so far is solved
    exactly and kept if it satisfies the optimality conditions.
    Returns ``(u, converged, epochs)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    lam = 0.5 / C
    Q = X @ X.T
    hdiag = np.diag(Q) + lam
    beta = np.zeros(n)
    Qb = np.zeros(n)
    rng = np.random.default_rng(seed)
    converged = False
    epoch = 0
    for epoch in range(1, max_iter + 1):
        worst = 0.0
        for i in rng.permutation(n):
            G = Qb[i] - y[i] + lam * beta[i]
            gp, gn = G + epsilon, G - epsilon
            b = beta[i]
            if b > 0:
                viol = abs(gp)
            elif b < 0:
                viol = abs(gn)
            else:
                viol = max(gn, -gp, 0.0)
            worst = max(worst, viol)
            H = hdiag[i]
            if gp < H * b:
                d = -gp / H
            elif gn > H * b:
                d = -gn / H
            else:
                d = -b
            if d != 0.0:
                beta[i] = b + d
                Qb += d * Q[:, i]
        if worst < tol:
            converged = True
            break
        if refine_every and epoch % refine_every == 0:
            exact = _active_set_solve(Q, y, lam, beta, epsilon, tol)
            if exact is not None:
                beta = exact
                converged = True
                break
    return X.T @ beta, converged, epoch


def ranksvm_objective(u, seg, C=1.0) -> float:
    """``0.5*||u||^2 + C * sum_{a>b} max(0, 1 - u.(g_a - g_b))`` on raw features."""
    X = np.asarray(seg, dtype=np.float64).reshape(len(seg), -1)
    s = X @ np.asarray(u, dtype=np.float64)
    a, b = np.triu_indices(len(s), k=1)
    return 0.5 * float(u @ u) + C * float(np.maximum(0.0, 1.0 - (s[b] - s[a])).sum())


def ranksvm_subgradient(X, C=1.0, max_iter=1000, tol=1e-6, seed=0):
    """Pairwise RankSVM with later frames ranked above earlier ones.

    Subgradient descent with step ``1/k`` (the objective is 1-strongly
    convex); the best iterate seen is returned.
    """
    X = np.asarray(X, dtype=np.float64)
    T, d = X.shape
    later, earlier = np.triu_indices(T, k=1)[::-1]
    D = X[later] - X[earlier]          # rows g_a - g_b with a after b
    rng = np.random.default_rng(seed)
    u = rng.normal(scale=1e-3, size=d)

    def objective(v):
        return 0.5 * float(v @ v) + C * float(np.maximum(0.0, 1.0 - D @ v).sum())

    best_u, best_f = u.copy(), objective(u)
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        active = (D @ u) < 1.0
        g = u - C * D[active].sum(axis=0)
        u = u - g / k
        f = objective(u)
        if f < best_f - tol * max(1.0, abs(best_f)):
            best_u, best_f = u.copy(), f
        elif np.linalg.norm(g) < tol:
            converged = True
            break
    else:
        # step sizes shrink to ~1/max_iter; accept if the last quarter made no progress
        converged = np.linalg.norm(u - best_u) < 1e-3 * max(1.0, np.linalg.norm(best_u))
    return best_u, bool(converged), k


def fit_rank_pool(seg, solver: str = "svr", C: float = 1.0, epsilon: float = 0.1,
                  max_iter: int = 1000, tol: float = 1e-6, seed: int = 0, index: int = 0) -> DynamicMap:
    """Fit the ranking vector ``u`` for one sub-segment ``seg`` of shape ``(T, ...)``.

    ``svr`` regresses the normalised time index t/T on the (centred)
    frames; ``ranksvm_subgrad`` solves the pairwise max-margin problem
    directly. Features are divided by their global RMS before fitting and
    ``u`` is mapped back, so scaling the input leaves the ordering unchanged.
    """
    X, Xc, rho = _prepare(seg)
    T = X.shape[0]
    if T == 1:
        return DynamicMap(X[0].copy(), index, True, True)
    if rho == 0.0:
        return DynamicMap(np.zeros(X.shape[1]), index, True, False)
    if solver == "svr":
        y = np.arange(1, T + 1) / T
        u, ok, it = svr_dual_cd(Xc / rho, y - y.mean(), C, epsilon, max_iter, tol, seed)
    elif solver == "ranksvm_subgrad":
        u, ok, it = ranksvm_subgradient(Xc / rho, C, max_iter, tol, seed)
    else:
        raise ValidationError(f"unknown solver {solver!r}")
    u = u / rho
    if not np.all(np.isfinite(u)):
        raise NumericError("rank pooling produced non-finite parameters")
    return DynamicMap(u, index, ok, False, iterations=it)


def normalize_map(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo <= 0:
        return np.full_like(arr, 0.5)
    return (arr - lo) / (hi - lo)


def encode_video_dynamics(video: VideoSequence, num_windows: int = 8, threshold: float | None = None,
                          solver: str = "svr", C: float = 1.0, epsilon: float = 0.1,
                          smoothing: str = "running_mean", max_iter: int = 1000, tol: float = 1e-6,
                          seed: int = 0) -> list:
    """One dynamic map per window, shaped like a single frame and scaled to [0, 1]."""
    threshold = 4 * num_windows if threshold is None else threshold
    frames = np.asarray(video.frames, dtype=np.float64)
    plan = compute_window_plan(frames.shape[0], num_windows, threshold)
    if plan.num_frames > frames.shape[0]:
        pad = np.repeat(frames[-1:], plan.num_frames - frames.shape[0], axis=0)
        frames = np.concatenate([frames, pad], axis=0)
    geometry = frames.shape[1:]
    flat = frames.reshape(frames.shape[0], -1)
    maps = []
    for h, sl in enumerate(plan.slices()):
        seg = smooth_segment(flat[sl], smoothing)
        fit = fit_rank_pool(seg, solver, C, epsilon, max_iter, tol, seed, index=h)
        image = normalize_map(fit.u.reshape(geometry))
        maps.append(DynamicMap(fit.u, h, fit.converged, fit.single_frame, image, fit.iterations))
    return maps


def stack_maps(maps) -> np.ndarray:
    """``(H, height, width, channels)`` array of the normalised map images."""
    return np.stack([m.image for m in maps])

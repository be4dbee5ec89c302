"""Initial rigid bodies, motions, superpixels and planes.

Motions come from a Levenberg-Marquardt fit of each body's pose jointly with
one 3D point per sparse match, trading robustified reprojection error
against the depth priors in both frames; the priors fix the metric scale.
Planes come from a weighted linear fit of each superpixel to the prior means,
which is exact because inverse depth is linear in the scaled normal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .depthprob import DepthDistMap
from .errors import InsufficientMatches, SolverDiverged
from .geometry import CameraIntrinsics, RigidMotion, skew, so3_exp
from .kernels import popcount24
from .scenemodel import BACKGROUND, OBJECT, Superpixel

log = logging.getLogger(__name__)

MIN_MATCHES = 6


@dataclass(frozen=True)
class InitConfig:
    theta4: float = 1.0
    max_iterations: int = 100
    initial_damping: float = 1e-3
    max_damping: float = 1e12
    ftol: float = 1e-12
    xtol: float = 1e-12
    gtol: float = 1e-10
    vote_threshold: int = 3
    huber_width: float = 1.5

    def __post_init__(self):
        if not self.theta4 > 0:
            raise ValueError("theta4 must be positive")


# --- instance pairing -------------------------------------------------------------------


@dataclass
class BodyLink:
    body_id: int
    kind: str
    label0: int
    label1: int | None  # None: instance not found in frame 1


def _labels_at(mask, xy):
    h, w = mask.shape
    u = np.clip(np.floor(xy[:, 0] + 0.5).astype(np.int64), 0, w - 1)
    v = np.clip(np.floor(xy[:, 1] + 0.5).astype(np.int64), 0, h - 1)
    return mask[v, u].astype(np.int64)


def pair_instances(masks0, masks1, matches, vote_threshold: int = 3) -> list[BodyLink]:
    """Link frame-0 instances to frame-1 instances by plurality vote of matches.

    Plurality ties go to the lowest frame-1 label, so the result does not
    depend on match order.  Background is always body 0.
    """
    matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    l0 = _labels_at(np.asarray(masks0), matches[:, :2])
    l1 = _labels_at(np.asarray(masks1), matches[:, 2:])
    links = [BodyLink(0, BACKGROUND, 0, 0)]
    for i in np.unique(np.asarray(masks0)):
        i = int(i)
        if i == 0:
            continue
        votes = np.bincount(l1[l0 == i], minlength=1) if np.any(l0 == i) else np.zeros(1, dtype=np.int64)
        j = int(np.argmax(votes)) if votes.size else 0
        linked = j if j > 0 and votes[j] >= vote_threshold else None
        links.append(BodyLink(len(links), OBJECT, i, linked))
    return links


def body_matches(link: BodyLink, masks0, masks1, matches) -> np.ndarray:
    matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    l0 = _labels_at(np.asarray(masks0), matches[:, :2])
    keep = l0 == link.label0
    if link.label1 is not None:
        keep &= _labels_at(np.asarray(masks1), matches[:, 2:]) == link.label1
    return matches[keep]


# --- joint pose and point objective -------------------------------------------------------


def _huber(s, delta):
    """Robust cost of a squared residual ``s`` and its derivative ``d rho / d s``."""
    root = np.sqrt(s)
    small = root <= delta
    cost = np.where(small, s, 2.0 * delta * root - delta * delta)
    with np.errstate(divide="ignore"):
        dcost = np.where(small, 1.0, delta / np.maximum(root, 1e-300))
    return cost, dcost


def _mixture_terms(lc, mu, isd, d):
    """NLL, its derivative and a positive curvature proxy, row-wise."""
    z = (d[:, None] - mu) * isd
    lp = lc - 0.5 * z * z
    top = lp.max(axis=1)
    e = np.exp(lp - top[:, None])
    tot = e.sum(axis=1)
    gamma = e / tot[:, None]
    nll = -(top + np.log(tot))
    prec = isd * isd
    grad = (gamma * (d[:, None] - mu) * prec).sum(axis=1)
    curv = (gamma * prec).sum(axis=1)
    return nll, grad, curv


class MotionProblem:
    """Pose + per-match inverse depth; points are anchored on their frame-0 rays.

    With the anchoring the frame-0 reprojection error is identically zero, so
    only the frame-1 reprojection term and both prior terms remain.
    """

    def __init__(self, matches, prior0: DepthDistMap, prior1: DepthDistMap, K: CameraIntrinsics, cfg: InitConfig):
        matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
        self.p0 = matches[:, :2]
        self.p1 = matches[:, 2:]
        self.K = K
        self.cfg = cfg
        self.rays = K.rays(self.p0[:, 0], self.p0[:, 1])
        u0 = np.clip(np.floor(self.p0[:, 0] + 0.5).astype(np.int64), 0, K.width - 1)
        v0 = np.clip(np.floor(self.p0[:, 1] + 0.5).astype(np.int64), 0, K.height - 1)
        lc0, mu0, is0 = prior0.kernel_arrays()
        self.prior0_rows = (lc0[v0, u0], mu0[v0, u0], is0[v0, u0])
        self.prior1 = prior1.kernel_arrays()
        self.prior0_mean = prior0.mean()[v0, u0]

    @property
    def n(self) -> int:
        return self.p0.shape[0]

    def points(self, rho) -> np.ndarray:
        return self.rays / rho[:, None]

    def _prior1_rows(self, uv):
        lc, mu, isd = self.prior1
        u = np.clip(np.floor(uv[:, 0] + 0.5), 0, self.K.width - 1).astype(np.int64)
        v = np.clip(np.floor(uv[:, 1] + 0.5), 0, self.K.height - 1).astype(np.int64)
        return lc[v, u], mu[v, u], isd[v, u]

    def evaluate(self, R, t, rho, derivatives: bool = False):
        K = self.K
        Xr = self.rays @ R.T / rho[:, None]
        X1 = Xr + t
        z = X1[:, 2]
        if np.any(rho <= 0) or np.any(z <= 0) or not np.all(np.isfinite(X1)):
            return {"F": np.inf}
        uv = np.stack([K.fx * X1[:, 0] / z + K.cx, K.fy * X1[:, 1] / z + K.cy], axis=1)
        e = uv - self.p1
        s = (e * e).sum(axis=1)
        rob, drob = _huber(s, self.cfg.huber_width)
        d1 = 1.0 / z
        nll0, g0, c0 = _mixture_terms(*self.prior0_rows, rho)
        nll1, g1, c1 = _mixture_terms(*self._prior1_rows(uv), d1)
        out = {
            "F": float(self.cfg.theta4 * rob.sum() + nll0.sum() + nll1.sum()),
            "e": e, "nll0": nll0, "nll1": nll1, "d1": d1,
        }
        if not derivatives:
            return out
        n = self.n
        # dX1/d(omega, t, rho)
        dX_dw = -np.stack([skew(x) for x in Xr])  # (n, 3, 3)
        dX_drho = -Xr / rho[:, None]
        Jpi = np.zeros((n, 2, 3))
        Jpi[:, 0, 0] = K.fx / z
        Jpi[:, 0, 2] = -K.fx * X1[:, 0] / z**2
        Jpi[:, 1, 1] = K.fy / z
        Jpi[:, 1, 2] = -K.fy * X1[:, 1] / z**2
        Je_pose = np.concatenate([Jpi @ dX_dw, Jpi], axis=2)  # (n, 2, 6)
        Je_rho = np.einsum("nij,nj->ni", Jpi, dX_drho)  # (n, 2)
        dd1_dX = np.zeros((n, 3))
        dd1_dX[:, 2] = -1.0 / z**2
        Jd1_pose = np.concatenate([np.einsum("nj,njk->nk", dd1_dX, dX_dw), dd1_dX], axis=1)  # (n, 6)
        Jd1_rho = (dd1_dX * dX_drho).sum(axis=1)
        out.update(
            Je_pose=Je_pose, Je_rho=Je_rho, Jd1_pose=Jd1_pose, Jd1_rho=Jd1_rho,
            drob=drob, g0=g0, c0=c0, g1=g1, c1=c1,
        )
        return out

    def gradient(self, ev):
        """Exact gradient of F w.r.t. (omega, t) and each rho."""
        w = 2.0 * self.cfg.theta4 * ev["drob"]
        g_pose = np.einsum("n,nij,ni->j", w, ev["Je_pose"], ev["e"]) + (ev["g1"][:, None] * ev["Jd1_pose"]).sum(axis=0)
        g_rho = w * (ev["Je_rho"] * ev["e"]).sum(axis=1) + ev["g1"] * ev["Jd1_rho"] + ev["g0"]
        return g_pose, g_rho

    def normal_matrix(self, ev):
        """Gauss-Newton blocks: pose-pose (6x6), pose-point (6xn), point diagonal (n)."""
        w = 2.0 * self.cfg.theta4 * ev["drob"]
        Je, Jr = ev["Je_pose"], ev["Je_rho"]
        H_pp = np.einsum("n,nik,nil->kl", w, Je, Je) + np.einsum("n,nk,nl->kl", ev["c1"], ev["Jd1_pose"], ev["Jd1_pose"])
        H_pr = np.einsum("n,nik,ni->kn", w, Je, Jr) + (ev["c1"] * ev["Jd1_rho"])[None, :] * ev["Jd1_pose"].T
        H_rr = w * (Jr * Jr).sum(axis=1) + ev["c1"] * ev["Jd1_rho"] ** 2 + ev["c0"]
        return H_pp, H_pr, H_rr


@dataclass
class LMResult:
    motion: RigidMotion
    points: np.ndarray  # (n, 3) frame-0 points
    inverse_depths: np.ndarray
    cost_history: list = field(default_factory=list)  # objective after every accepted step (first = initial)
    iterations: int = 0
    accepted: int = 0


def levenberg_marquardt(problem: MotionProblem, motion: RigidMotion, rho, cfg: InitConfig) -> LMResult:
    R, t = motion.rotation.copy(), motion.translation.copy()
    rho = np.asarray(rho, dtype=np.float64).copy()
    ev = problem.evaluate(R, t, rho, derivatives=True)
    if not np.isfinite(ev["F"]):
        raise SolverDiverged("initial state has invalid geometry (non-positive depth)")
    history = [ev["F"]]
    mu = cfg.initial_damping
    accepted = 0
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        g_pose, g_rho = problem.gradient(ev)
        if max(np.abs(g_pose).max(), np.abs(g_rho).max()) <= cfg.gtol * (1.0 + abs(ev["F"])):
            break
        H_pp, H_pr, H_rr = problem.normal_matrix(ev)
        step_taken = False
        while mu <= cfg.max_damping:
            A = H_pp + mu * np.diag(np.diag(H_pp) + 1e-12)
            D = H_rr + mu * (H_rr + 1e-12)
            # Schur complement on the diagonal point block
            S = A - (H_pr / D[None, :]) @ H_pr.T
            rhs = -g_pose + H_pr @ (g_rho / D)
            try:
                dp = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            dr = (-g_rho - H_pr.T @ dp) / D
            R_new = so3_exp(dp[:3]) @ R
            t_new = t + dp[3:]
            rho_new = rho + dr
            ev_new = problem.evaluate(R_new, t_new, rho_new, derivatives=True)
            if ev_new["F"] < ev["F"]:
                gain = ev["F"] - ev_new["F"]
                small_step = np.linalg.norm(np.concatenate([dp, dr])) <= cfg.xtol * (
                    np.linalg.norm(t) + np.linalg.norm(rho) + cfg.xtol
                )
                R, t, rho, ev = R_new, t_new, rho_new, ev_new
                history.append(ev["F"])
                accepted += 1
                mu = max(mu / 3.0, 1e-15)
                step_taken = True
                if gain <= cfg.ftol * (abs(ev["F"]) + cfg.ftol) or small_step:
                    return LMResult(RigidMotion(R, t), problem.points(rho), rho, history, it, accepted)
                break
            mu *= 4.0
        if not step_taken:
            # no damping level decreases the objective: numerically stationary
            break
    if not np.all(np.isfinite(rho)):
        raise SolverDiverged("LM produced non-finite parameters")
    return LMResult(RigidMotion(R, t), problem.points(rho), rho, history, it, accepted)


def estimate_body_motion(matches, prior0: DepthDistMap, prior1: DepthDistMap, K: CameraIntrinsics,
                         cfg: InitConfig = InitConfig(), init_motion: RigidMotion | None = None,
                         init_rho=None) -> LMResult:
    matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    if matches.shape[0] < MIN_MATCHES:
        raise InsufficientMatches(f"need at least {MIN_MATCHES} matches, got {matches.shape[0]}")
    problem = MotionProblem(matches, prior0, prior1, K, cfg)
    rho = problem.prior0_mean.copy() if init_rho is None else np.asarray(init_rho, dtype=np.float64)
    return levenberg_marquardt(problem, init_motion or RigidMotion.identity(), rho, cfg)


# --- two-view bootstrap ---------------------------------------------------------------


def _normalize(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return np.c_[x, np.ones(len(x))] @ T.T, T


def essential_eight_point(x0, x1) -> np.ndarray:
    """Essential matrix from normalized image coordinates (``x1^T E x0 = 0``)."""
    a, T0 = _normalize(x0)
    b, T1 = _normalize(x1)
    A = np.einsum("ni,nj->nij", b, a).reshape(-1, 9)
    _, _, Vt = np.linalg.svd(A)
    E = T1.T @ Vt[-1].reshape(3, 3) @ T0
    U, _, Vt = np.linalg.svd(E)
    return U @ np.diag([1.0, 1.0, 0.0]) @ Vt


def triangulate_depths(R, t, r0, r1):
    """Depths ``(z0, z1)`` with ``R z0 r0 + t = z1 r1`` in the least-squares sense."""
    a = r0 @ R.T
    b = -r1
    aa = (a * a).sum(1)
    bb = (b * b).sum(1)
    ab = (a * b).sum(1)
    at = (a * t).sum(1)
    bt = (b * t).sum(1)
    det = aa * bb - ab * ab
    with np.errstate(divide="ignore", invalid="ignore"):
        z0 = (-at * bb + bt * ab) / det
        z1 = (-bt * aa + at * ab) / det
    return z0, z1


def decompose_essential(E, r0, r1):
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    best = None
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            z0, z1 = triangulate_depths(R, t, r0, r1)
            good = int(np.sum((z0 > 0) & (z1 > 0)))
            if best is None or good > best[0]:
                best = (good, R, t, z0)
    return best[1], best[2], best[3]


def bootstrap_motion(matches, prior0: DepthDistMap, K: CameraIntrinsics, min_parallax: float = 0.5) -> RigidMotion:
    """Eight-point motion with translation scaled by the median prior depth."""
    matches = np.asarray(matches, dtype=np.float64).reshape(-1, 4)
    disp = np.linalg.norm(matches[:, 2:] - matches[:, :2], axis=1)
    if len(matches) < 8 or np.median(disp) < min_parallax:
        return RigidMotion.identity()
    r0 = K.rays(matches[:, 0], matches[:, 1])
    r1 = K.rays(matches[:, 2], matches[:, 3])
    E = essential_eight_point(r0[:, :2], r1[:, :2])
    R, t_unit, z0 = decompose_essential(E, r0, r1)
    ok = np.isfinite(z0) & (z0 > 0)
    if ok.sum() < 3:
        return RigidMotion.identity()
    u = np.clip(np.floor(matches[ok, 0] + 0.5).astype(np.int64), 0, K.width - 1)
    v = np.clip(np.floor(matches[ok, 1] + 0.5).astype(np.int64), 0, K.height - 1)
    prior_z = 1.0 / np.maximum(prior0.mean()[v, u], 1e-12)
    scale = np.median(prior_z) / np.median(z0[ok])
    return RigidMotion(R, t_unit * scale)


def init_background_motion(matches, prior0: DepthDistMap, prior1: DepthDistMap, K: CameraIntrinsics,
                           cfg: InitConfig = InitConfig()) -> LMResult:
    start = bootstrap_motion(matches, prior0, K)
    return estimate_body_motion(matches, prior0, prior1, K, cfg, init_motion=start)


def init_object_motion(matches, prior0, prior1, K, cfg: InitConfig, background: RigidMotion) -> RigidMotion:
    """Best LM result from the background motion and (when possible) an eight-point start."""
    if len(matches) < MIN_MATCHES:
        return background
    starts = [background]
    boot = bootstrap_motion(matches, prior0, K)
    if len(matches) >= 8:
        starts.append(boot)
    best = None
    for start in starts:
        try:
            res = estimate_body_motion(matches, prior0, prior1, K, cfg, init_motion=start)
        except SolverDiverged:
            continue
        if best is None or res.cost_history[-1] < best.cost_history[-1]:
            best = res
    return background if best is None else best.motion


# --- superpixels ---------------------------------------------------------------------------


def superpixelize(img, masks, target_count: int, compactness: float = 10.0, iterations: int = 10,
                  smoothing: float = 3.0) -> list[Superpixel]:
    """Grid-seeded local k-means on (smoothed intensity, position), constrained by instance labels.

    A pixel may only join a seed carrying its own instance label, so no
    superpixel straddles an instance boundary.  Disconnected fragments are
    merged into the same-label neighbor sharing the longest border.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    masks = np.zeros((h, w), dtype=np.int64) if masks is None else np.asarray(masks, dtype=np.int64)
    feat = ndimage.gaussian_filter(img, smoothing) if smoothing > 0 else img
    step = np.sqrt(h * w / target_count)
    nx = max(1, int(round(w / step)))
    ny = max(1, int(round(h / step)))
    sx, sy = w / nx, h / ny
    seeds = []
    for j in range(ny):
        for i in range(nx):
            cu, cv = (i + 0.5) * sx - 0.5, (j + 0.5) * sy - 0.5
            iu, iv = int(round(cu)), int(round(cv))
            seeds.append([cu, cv, feat[iv, iu], masks[iv, iu]])
    present = {int(s[3]) for s in seeds}
    vv, uu = np.mgrid[0:h, 0:w]
    for lab in np.unique(masks):
        if int(lab) not in present:
            m = masks == lab
            cu, cv = uu[m].mean(), vv[m].mean()
            k = np.argmin((uu[m] - cu) ** 2 + (vv[m] - cv) ** 2)
            seeds.append([float(uu[m][k]), float(vv[m][k]), feat[vv[m][k], uu[m][k]], int(lab)])
    seeds = np.array(seeds, dtype=np.float64)
    spatial = (1.0 / step) ** 2
    color = (1.0 / compactness) ** 2
    win = int(np.ceil(step))
    assign = np.full((h, w), -1, dtype=np.int64)
    for _ in range(iterations):
        best = np.full((h, w), np.inf)
        assign.fill(-1)
        for k, (cu, cv, ci, lab) in enumerate(seeds):
            u0, u1 = max(0, int(cu) - win), min(w, int(cu) + win + 2)
            v0, v1 = max(0, int(cv) - win), min(h, int(cv) + win + 2)
            du = uu[v0:v1, u0:u1] - cu
            dv = vv[v0:v1, u0:u1] - cv
            di = feat[v0:v1, u0:u1] - ci
            dist = spatial * (du * du + dv * dv) + color * di * di
            dist = np.where(masks[v0:v1, u0:u1] == lab, dist, np.inf)
            sub = best[v0:v1, u0:u1]
            better = dist < sub
            sub[better] = dist[better]
            assign[v0:v1, u0:u1][better] = k
        _assign_orphans(assign, masks, seeds, uu, vv)
        for k in range(len(seeds)):
            m = assign == k
            if m.any():
                seeds[k, :3] = uu[m].mean(), vv[m].mean(), feat[m].mean()
    labels = _enforce_connectivity(assign, masks, min_size=max(3, int(step * step / 8)))
    return build_superpixels(labels, masks)


def _assign_orphans(assign, masks, seeds, uu, vv):
    orphan = assign < 0
    if not orphan.any():
        return
    for lab in np.unique(masks[orphan]):
        cand = np.flatnonzero(seeds[:, 3] == lab)
        m = orphan & (masks == lab)
        d = (uu[m][:, None] - seeds[cand, 0]) ** 2 + (vv[m][:, None] - seeds[cand, 1]) ** 2
        assign[m] = cand[np.argmin(d, axis=1)]


def _enforce_connectivity(assign, masks, min_size: int) -> np.ndarray:
    h, w = assign.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    nxt = 0
    for k in np.unique(assign):
        comp, n = ndimage.label(assign == k)
        for c in range(1, n + 1):
            labels[comp == c] = nxt
            nxt += 1
    # merge small fragments into the same-instance neighbor with the longest shared border
    sizes = np.bincount(labels.ravel())
    for c in np.argsort(sizes, kind="stable"):
        if sizes[c] >= min_size or sizes[c] == 0:
            continue
        m = labels == c
        ring = ndimage.binary_dilation(m, structure=ndimage.generate_binary_structure(2, 1)) & ~m
        lab = masks[m][0]
        cand = labels[ring & (masks == lab)]
        if cand.size == 0:
            continue
        target = int(np.bincount(cand).argmax())
        labels[m] = target
        sizes[target] += sizes[c]
        sizes[c] = 0
    # renumber in order of first appearance (row-major)
    _, first = np.unique(labels.ravel(), return_index=True)
    order = np.argsort(first, kind="stable")
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels.ravel())[order]] = np.arange(order.size)
    return remap[labels]


def build_superpixels(labels, masks=None, body_of_label=None) -> list[Superpixel]:
    """Superpixels (with 4-connected shared boundaries) from a dense label image.

    ``B_kl`` holds the pixels on both sides of the k/l border, so it is
    symmetric by construction.
    """
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    n = int(labels.max()) + 1
    vv, uu = np.mgrid[0:h, 0:w]
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n)
    splits = np.cumsum(counts)[:-1]
    pix = np.stack([uu.ravel(), vv.ravel()], axis=1)[order]
    groups = np.split(pix, splits)

    boundary: dict = {}

    def add(a, b, pa, pb):
        diff = a != b
        for la, lb, qa, qb in zip(a[diff], b[diff], pa[diff], pb[diff]):
            key = (int(min(la, lb)), int(max(la, lb)))
            boundary.setdefault(key, set()).update((tuple(qa), tuple(qb)))

    P = np.stack([uu, vv], axis=-1)
    add(labels[:, :-1].ravel(), labels[:, 1:].ravel(), P[:, :-1].reshape(-1, 2), P[:, 1:].reshape(-1, 2))
    add(labels[:-1, :].ravel(), labels[1:, :].ravel(), P[:-1, :].reshape(-1, 2), P[1:, :].reshape(-1, 2))

    body_of_label = body_of_label or {}
    sps = []
    for k in range(n):
        body = 0
        if masks is not None and counts[k]:
            u, v = groups[k][0]
            lab = int(np.asarray(masks)[v, u])
            body = body_of_label.get(lab, lab)
        sps.append(Superpixel(k, groups[k].astype(np.int64), body, {}))
    for (a, b), pts in sorted(boundary.items()):
        arr = np.array(sorted(pts, key=lambda p: (p[1], p[0])), dtype=np.int64)
        sps[a].neighbors[b] = arr
        sps[b].neighbors[a] = arr
    for sp in sps:
        sp.neighbors = dict(sorted(sp.neighbors.items()))
    return sps


# --- planes -----------------------------------------------------------------------------------


def _weighted_median(values, weights) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    return float(values[order][np.searchsorted(cum, 0.5 * cum[-1])])


def fit_plane(rays, targets, weights, max_condition: float = 1e8) -> np.ndarray:
    """Weighted least squares ``min_n sum w (n . ray - target)^2``.

    Falls back to the fronto-parallel plane at the weighted median target
    when the 3x3 normal system is too ill-conditioned.
    """
    sw = np.sqrt(weights)
    A = rays * sw[:, None]
    b = targets * sw
    M = A.T @ A
    if rays.shape[0] < 3 or np.linalg.cond(M) > max_condition:
        return np.array([0.0, 0.0, _weighted_median(targets, weights)])
    n, *_ = np.linalg.lstsq(A, b, rcond=None)
    return n


def init_planes(superpixels, prior: DepthDistMap, K: CameraIntrinsics) -> np.ndarray:
    mean = prior.mean()
    var = prior.variance()
    planes = np.zeros((len(superpixels), 3))
    for sp in superpixels:
        u, v = sp.pixels[:, 0], sp.pixels[:, 1]
        wts = 1.0 / np.maximum(var[v, u], 1e-300)
        wts = wts / wts.max()
        planes[sp.id] = fit_plane(K.rays(u, v), mean[v, u], wts)
    return planes


# --- fallback matcher ---------------------------------------------------------------------


def census_block_matches(census0, census1, step: int = 16, radius: int = 64, block: int = 2,
                         max_cost: float = 6.0) -> np.ndarray:
    """Sparse matches by exhaustive Census block matching on a coarse grid.

    Searches ``+-radius`` pixels at stride 2, refines at stride 1, and keeps
    matches whose mean per-pixel Hamming cost is at most ``max_cost``.
    """
    h, w = census0.shape
    off = step // 2
    out = []
    by = np.arange(-block, block + 1)
    for v in range(off + block, h - block, step):
        for u in range(off + block, w - block, step):
            patch = census0[v - block : v + block + 1, u - block : u + block + 1]

            def costs(cands):
                cu, cv = cands[:, 0], cands[:, 1]
                pv = np.clip(cv[:, None, None] + by[None, :, None], 0, h - 1)
                pu = np.clip(cu[:, None, None] + by[None, None, :], 0, w - 1)
                return popcount24(census1[pv, pu] ^ patch[None]).reshape(len(cands), -1).mean(axis=1)

            dv, du = np.mgrid[-radius : radius + 1 : 2, -radius : radius + 1 : 2]
            cands = np.stack([u + du.ravel(), v + dv.ravel()], axis=1)
            cands = cands[(cands[:, 0] >= 0) & (cands[:, 0] < w) & (cands[:, 1] >= 0) & (cands[:, 1] < h)]
            c = costs(cands)
            bu, bv = cands[np.argmin(c)]
            dv, du = np.mgrid[-2:3, -2:3]
            fine = np.stack([bu + du.ravel(), bv + dv.ravel()], axis=1)
            fine = fine[(fine[:, 0] >= 0) & (fine[:, 0] < w) & (fine[:, 1] >= 0) & (fine[:, 1] < h)]
            cf = costs(fine)
            k = int(np.argmin(cf))
            if cf[k] <= max_cost:
                out.append([u, v, fine[k, 0], fine[k, 1]])
    return np.array(out, dtype=np.float64).reshape(-1, 4)

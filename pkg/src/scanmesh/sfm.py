"""Multi-view triangulation and bundle adjustment with a depth factor.

The joint objective is the Cauchy-robustified reprojection error plus, for
observations whose projection lands on a valid filtered-depth pixel, an
absolute depth residual |D - z| / eta that ties the reconstruction to the
sensor's metric scale.  Minimization is Levenberg-Marquardt over local pose
increments (so(3) x R^3, world->camera perturbed in the camera frame) and
point positions, with robust terms handled by iterative reweighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import CameraIntrinsics, Pose, so3_exp
from .errors import CheiralityViolation, DegenerateGeometry, SolverFailure


@dataclass
class Track:
    point: np.ndarray                         # (3,) world position (parameter)
    observations: list[tuple[int, np.ndarray]]  # (frame index, pixel (2,))

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=np.float64).reshape(3)
        self.observations = [(int(i), np.asarray(p, dtype=np.float64).reshape(2))
                             for i, p in self.observations]


@dataclass(frozen=True)
class DepthFactorConfig:
    eta: float = 0.05   # sensor noise scale, meters
    enabled: bool = True

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

def triangulate(observations: list[tuple[Pose, CameraIntrinsics, np.ndarray]]
                ) -> np.ndarray:
    """Linear DLT point from >= 2 posed pixel observations.

    Raises DegenerateGeometry for rank-deficient designs (parallel rays) and
    CheiralityViolation when the solution sits behind any camera.
    """
    if len(observations) < 2:
        raise DegenerateGeometry("need at least two observations")
    rows = []
    for pose, intr, pixel in observations:
        u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
        mx = (u - intr.cx) / intr.fx
        my = (v - intr.cy) / intr.fy
        P = np.hstack([pose.R, pose.t.reshape(3, 1)])
        rows.append(mx * P[2] - P[0])
        rows.append(my * P[2] - P[1])
    A = np.array(rows)
    _, s, Vt = np.linalg.svd(A)
    if s[2] <= 1e-9 * max(s[0], 1e-300):
        raise DegenerateGeometry("design matrix rank deficient")
    x = Vt[-1]
    if abs(x[3]) < 1e-12 * np.linalg.norm(x[:3]):
        raise DegenerateGeometry("point at infinity")
    X = x[:3] / x[3]
    for pose, _, _ in observations:
        if pose.apply(X)[2] <= 0:
            raise CheiralityViolation("triangulated point behind a camera")
    return X


# ---------------------------------------------------------------------------
# Problem definition
# ---------------------------------------------------------------------------

@dataclass
class BAProblem:
    poses: list[Pose]
    intrinsics: list[CameraIntrinsics]
    tracks: list[Track]
    depth_maps: list[np.ndarray] | None = None       # filtered, 0 = invalid
    depth_intrinsics: list[CameraIntrinsics] | None = None
    depth_cfg: DepthFactorConfig = field(default_factory=DepthFactorConfig)
    cauchy_scale: float = 1.0
    max_iterations: int = 100
    gradient_tol: float = 1e-8
    cost_tol: float = 1e-10
    fixed_cameras: tuple[int, ...] = (0,)

    # Built at construction: flattened observation arrays and fixed depth
    # factor associations (track, frame, measured depth).
    def __post_init__(self):
        obs_cam, obs_pt, obs_uv = [], [], []
        for j, tr in enumerate(self.tracks):
            if len(tr.observations) < 2:
                raise ValueError(f"track {j} has fewer than 2 observations")
            for i, px in tr.observations:
                if not (0 <= i < len(self.poses)):
                    raise ValueError(f"observation frame index {i} out of range")
                obs_cam.append(i)
                obs_pt.append(j)
                obs_uv.append(px)
        self.obs_cam = np.array(obs_cam, dtype=np.int64)
        self.obs_pt = np.array(obs_pt, dtype=np.int64)
        self.obs_uv = np.array(obs_uv, dtype=np.float64).reshape(-1, 2)
        self.depth_factors = self._associate_depth()

    def _associate_depth(self):
        """Fixes (track, frame, D) associations from the initial geometry so
        the cost stays well defined across iterations.  Lookup: nearest valid
        depth pixel within 1 px of the projection."""
        if (not self.depth_cfg.enabled or self.depth_maps is None
                or self.depth_intrinsics is None):
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
        idx, depths = [], []
        for j, tr in enumerate(self.tracks):
            for i, _ in tr.observations:
                dm = self.depth_maps[i]
                if dm is None:
                    continue
                intr = self.depth_intrinsics[i]
                pc = self.poses[i].apply(tr.point)
                if pc[2] <= 0:
                    continue
                u = intr.fx * pc[0] / pc[2] + intr.cx
                v = intr.fy * pc[1] / pc[2] + intr.cy
                best = None
                for vv in (int(np.floor(v)), int(np.ceil(v))):
                    for uu in (int(np.floor(u)), int(np.ceil(u))):
                        if not (0 <= uu < dm.shape[1] and 0 <= vv < dm.shape[0]):
                            continue
                        if dm[vv, uu] <= 0:
                            continue
                        d2 = (uu - u) ** 2 + (vv - v) ** 2
                        if d2 <= 1.0 and (best is None or d2 < best[0]):
                            best = (d2, dm[vv, uu])
                if best is not None:
                    idx.append((j, i))
                    depths.append(best[1])
        if not idx:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
        return np.array(idx, dtype=np.int64), np.array(depths, dtype=np.float64)

    def initial_state(self):
        Rs = np.stack([p.R for p in self.poses])
        ts = np.stack([p.t for p in self.poses])
        Xs = np.stack([t.point for t in self.tracks])
        return Rs, ts, Xs


class ParamLayout:
    """Maps free cameras/points to Jacobian column blocks.

    When the depth factor is disabled the scale gauge is additionally fixed
    by freezing the first track point's depth in the first camera (its local
    update is restricted to the plane orthogonal to that camera's viewing
    ray direction in the z sense).
    """

    def __init__(self, problem: BAProblem):
        n_cam = len(problem.poses)
        self.free_cams = [i for i in range(n_cam)
                          if i not in problem.fixed_cameras]
        self.cam_col = {c: 6 * k for k, c in enumerate(self.free_cams)}
        self.point_basis: dict[int, np.ndarray] = {}
        has_depth = len(problem.depth_factors[1]) > 0
        if not has_depth and len(problem.tracks) > 0:
            anchor_cam = problem.fixed_cameras[0] if problem.fixed_cameras else 0
            zdir = problem.poses[anchor_cam].R[2]  # rows of R: camera axes
            # Orthonormal basis of the plane with constant camera-z.
            a = np.array([1.0, 0.0, 0.0])
            if abs(np.dot(a, zdir)) > 0.9:
                a = np.array([0.0, 1.0, 0.0])
            b1 = np.cross(zdir, a)
            b1 /= np.linalg.norm(b1)
            b2 = np.cross(zdir, b1)
            self.point_basis[0] = np.stack([b1, b2], axis=1)  # (3, 2)
        self.pt_col = {}
        col = 6 * len(self.free_cams)
        self.pt_dims = {}
        for j in range(len(problem.tracks)):
            d = self.point_basis.get(j)
            dim = 3 if d is None else d.shape[1]
            self.pt_col[j] = col
            self.pt_dims[j] = dim
            col += dim
        self.n_cols = col

    def retract(self, Rs, ts, Xs, delta):
        Rs = Rs.copy()
        ts = ts.copy()
        Xs = Xs.copy()
        for c, col in self.cam_col.items():
            w = delta[col:col + 3]
            dt = delta[col + 3:col + 6]
            E = so3_exp(w)
            Rs[c] = E @ Rs[c]
            ts[c] = E @ ts[c] + dt
        for j, col in self.pt_col.items():
            dim = self.pt_dims[j]
            d = delta[col:col + dim]
            B = self.point_basis.get(j)
            Xs[j] = Xs[j] + (d if B is None else B @ d)
        return Rs, ts, Xs


def _raw_residuals(problem: BAProblem, Rs, ts, Xs):
    """Unweighted residuals: (reproj (B, 2), depth (Dn,), camera z (B,))."""
    cams = problem.obs_cam
    pts = problem.obs_pt
    pc = np.einsum("bij,bj->bi", Rs[cams], Xs[pts]) + ts[cams]
    z = pc[:, 2]
    fx = np.array([problem.intrinsics[i].fx for i in cams])
    fy = np.array([problem.intrinsics[i].fy for i in cams])
    cx = np.array([problem.intrinsics[i].cx for i in cams])
    cy = np.array([problem.intrinsics[i].cy for i in cams])
    zs = np.where(z > 1e-12, z, 1e-12)
    u = fx * pc[:, 0] / zs + cx
    v = fy * pc[:, 1] / zs + cy
    r_reproj = np.stack([u, v], axis=1) - problem.obs_uv

    df_idx, df_D = problem.depth_factors
    if len(df_D):
        dj, di = df_idx[:, 0], df_idx[:, 1]
        pcd = np.einsum("bij,bj->bi", Rs[di], Xs[dj]) + ts[di]
        r_depth = (df_D - pcd[:, 2]) / problem.depth_cfg.eta
    else:
        r_depth = np.zeros(0)
    return r_reproj, r_depth, pc


def robust_cost(problem: BAProblem, Rs, ts, Xs) -> float:
    """Total objective: sum of Cauchy(|reproj|^2) plus |depth residual|."""
    r_reproj, r_depth, _ = _raw_residuals(problem, Rs, ts, Xs)
    c2 = problem.cauchy_scale ** 2
    s = np.sum(r_reproj ** 2, axis=1)
    cost = float(np.sum(c2 * np.log1p(s / c2)))
    cost += float(np.sum(np.abs(r_depth)))
    return cost


def ba_residuals(problem: BAProblem, state=None):
    """Raw residual vector and analytic sparse Jacobian.

    Returns (r, J) with r = [reprojection residuals (2 per observation);
    depth residuals], J in CSR over the free local coordinates (6 per free
    camera pose, then up to 3 per point).
    """
    Rs, ts, Xs = state if state is not None else problem.initial_state()
    layout = ParamLayout(problem)
    r_reproj, r_depth, pc = _raw_residuals(problem, Rs, ts, Xs)
    B = len(problem.obs_cam)

    fx = np.array([problem.intrinsics[i].fx for i in problem.obs_cam])
    fy = np.array([problem.intrinsics[i].fy for i in problem.obs_cam])
    z = np.where(pc[:, 2] > 1e-12, pc[:, 2], 1e-12)
    # d(pi)/d(x_cam), shape (B, 2, 3)
    A = np.zeros((B, 2, 3))
    A[:, 0, 0] = fx / z
    A[:, 0, 2] = -fx * pc[:, 0] / z ** 2
    A[:, 1, 1] = fy / z
    A[:, 1, 2] = -fy * pc[:, 1] / z ** 2
    # d(x_cam)/d(omega) = -[x_cam]_x ; d/d(dt) = I ; d/dX = R
    Xc = pc
    skew = np.zeros((B, 3, 3))
    skew[:, 0, 1] = -Xc[:, 2]
    skew[:, 0, 2] = Xc[:, 1]
    skew[:, 1, 0] = Xc[:, 2]
    skew[:, 1, 2] = -Xc[:, 0]
    skew[:, 2, 0] = -Xc[:, 1]
    skew[:, 2, 1] = Xc[:, 0]
    J_rot = -np.einsum("bij,bjk->bik", A, skew)       # (B, 2, 3)
    J_tr = A                                           # (B, 2, 3)
    J_pt = np.einsum("bij,bjk->bik", A, Rs[problem.obs_cam])  # (B, 2, 3)

    rows, cols, vals = [], [], []

    def add_block(r0, c0, block):
        br, bc = block.shape
        rr, cc = np.meshgrid(np.arange(br), np.arange(bc), indexing="ij")
        rows.append((r0 + rr).ravel())
        cols.append((c0 + cc).ravel())
        vals.append(block.ravel())

    for b in range(B):
        cam = problem.obs_cam[b]
        ptj = problem.obs_pt[b]
        if cam in layout.cam_col:
            c0 = layout.cam_col[cam]
            add_block(2 * b, c0, J_rot[b])
            add_block(2 * b, c0 + 3, J_tr[b])
        Bp = layout.point_basis.get(ptj)
        blk = J_pt[b] if Bp is None else J_pt[b] @ Bp
        add_block(2 * b, layout.pt_col[ptj], blk)

    df_idx, df_D = problem.depth_factors
    Dn = len(df_D)
    base = 2 * B
    if Dn:
        dj, di = df_idx[:, 0], df_idx[:, 1]
        pcd = np.einsum("bij,bj->bi", Rs[di], Xs[dj]) + ts[di]
        eta = problem.depth_cfg.eta
        # r = (D - z)/eta ; dr/dx_cam = (0, 0, -1/eta)
        for k in range(Dn):
            cam, ptj = int(di[k]), int(dj[k])
            g = np.array([0.0, 0.0, -1.0 / eta])
            y = pcd[k]
            if cam in layout.cam_col:
                c0 = layout.cam_col[cam]
                sk = np.array([[0, -y[2], y[1]],
                               [y[2], 0, -y[0]],
                               [-y[1], y[0], 0]])
                add_block(base + k, c0, (-g @ sk).reshape(1, 3))
                add_block(base + k, c0 + 3, g.reshape(1, 3))
            Bp = layout.point_basis.get(ptj)
            blk = (g @ Rs[cam]).reshape(1, 3)
            if Bp is not None:
                blk = blk @ Bp
            add_block(base + k, layout.pt_col[ptj], blk)

    n_rows = 2 * B + Dn
    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, layout.n_cols)).tocsr()
    r = np.concatenate([r_reproj.ravel(), r_depth])
    return r, J


def _irls_weights(problem: BAProblem, r: np.ndarray, n_obs: int,
                  tau: float = 1e-6) -> np.ndarray:
    """Per-row sqrt IRLS weights: Cauchy for reprojection rows, 1/max(|r|,tau)
    for the absolute depth rows."""
    c2 = problem.cauchy_scale ** 2
    rr = r[:2 * n_obs].reshape(-1, 2)
    s = np.sum(rr ** 2, axis=1)
    w_reproj = 1.0 / (1.0 + s / c2)
    w = np.repeat(w_reproj, 2)
    rd = r[2 * n_obs:]
    if len(rd):
        w = np.concatenate([w, 1.0 / np.maximum(np.abs(rd), tau)])
    return np.sqrt(w)


def refine(problem: BAProblem):
    """Levenberg-Marquardt refinement.

    Returns (poses, points, cost_history); cost history holds the robust
    total cost after each accepted step (index 0 = initial cost).
    """
    Rs, ts, Xs = problem.initial_state()
    layout = ParamLayout(problem)
    n_obs = len(problem.obs_cam)
    lam = 1e-4
    cost = robust_cost(problem, Rs, ts, Xs)
    history = [cost]

    for _ in range(problem.max_iterations):
        if cost < 1e-14:
            break
        r, J = ba_residuals(problem, (Rs, ts, Xs))
        sw = _irls_weights(problem, r, n_obs)
        Jw = sp.diags(sw) @ J
        rw = sw * r
        g = Jw.T @ rw
        if np.max(np.abs(g)) < problem.gradient_tol:
            break
        H = (Jw.T @ Jw).toarray()
        diag = np.maximum(np.diag(H), 1e-12)
        accepted = False
        for _ in range(12):
            Hl = H + lam * np.diag(diag)
            try:
                delta = np.linalg.solve(Hl, -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            if not np.all(np.isfinite(delta)):
                lam *= 10
                continue
            Rs2, ts2, Xs2 = layout.retract(Rs, ts, Xs, delta)
            new_cost = robust_cost(problem, Rs2, ts2, Xs2)
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                Rs, ts, Xs = Rs2, ts2, Xs2
                cost = new_cost
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                if rel < problem.cost_tol:
                    lam = -1.0  # sentinel: converged
                break
            lam *= 10
        if not accepted:
            # Could not decrease even with heavy damping: either converged
            # or the system is numerically singular.
            try:
                np.linalg.cholesky(H + lam * np.diag(diag))
            except np.linalg.LinAlgError:
                raise SolverFailure("normal equations singular after damping")
            break
        if lam < 0:
            break

    poses = [Pose.from_matrix(Rs[i], ts[i]) for i in range(len(problem.poses))]
    points = [Xs[j].copy() for j in range(len(problem.tracks))]
    return poses, points, history


def align_similarity(src: np.ndarray, dst: np.ndarray):
    """Least-squares similarity (s, R, t) with dst ~ s * R @ src + t
    (Umeyama's closed form)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1
    R = U @ S @ Vt
    var_s = (xs ** 2).sum() / len(src)
    s = float(np.trace(np.diag(D) @ S) / max(var_s, 1e-300))
    t = mu_d - s * R @ mu_s
    return s, R, t

"""Independent reference implementations used only by the test suite."""

import numpy as np


def enumerate_ray_cells(origin, direction, edge, max_range, grid_origin):
    """Exact brute-force ray/grid intersection for a uniform cube grid.

    Slab-tests every cell in the axis-aligned bounding box swept by the ray
    segment and keeps cells whose intersection with t in (0, max_range] has
    positive length. Used as the reference for the incremental grid walk.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    end = o + max_range * d
    lo = np.floor((np.minimum(o, end) - grid_origin) / edge).astype(int) - 1
    hi = np.floor((np.maximum(o, end) - grid_origin) / edge).astype(int) + 1
    cells = set()
    for ix in range(lo[0], hi[0] + 1):
        for iy in range(lo[1], hi[1] + 1):
            for iz in range(lo[2], hi[2] + 1):
                cmin = grid_origin + np.array([ix, iy, iz]) * edge
                t0, t1 = 0.0, max_range
                ok = True
                for axis in range(3):
                    if d[axis] == 0.0:
                        if not (cmin[axis] <= o[axis] < cmin[axis] + edge):
                            ok = False
                            break
                    else:
                        ta = (cmin[axis] - o[axis]) / d[axis]
                        tb = (cmin[axis] + edge - o[axis]) / d[axis]
                        if ta > tb:
                            ta, tb = tb, ta
                        t0 = max(t0, ta)
                        t1 = min(t1, tb)
                if ok and t1 - t0 > 1e-12:
                    cells.add((ix, iy, iz))
    return cells


def sample_ray_cells(origin, direction, cfg, max_range, step):
    """Sampling oracle: walk the ray at a fixed step, collect containing cells.

    Misses cells whose chord is shorter than the step, so it is only a
    subset reference for the exact traversal.
    """
    from provlm.partition import element_of

    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    keys = []
    seen = set()
    for t in np.arange(step, max_range + step / 2, step):
        key = element_of(o + t * d, cfg).key
        if key not in seen:
            seen.add(key)
            keys.append(key)
    return keys


def mvee_reference(points, solver_eps=1e-8):
    """Minimum-volume enclosing ellipsoid via an independent convex solver.

    Solves max log det A subject to ||A x_i + b|| <= 1 and returns the
    (mu, sigma) parameterization used by the package.
    """
    import cvxpy as cp

    pts = np.asarray(points, dtype=float)
    n, dim = pts.shape
    a = cp.Variable((dim, dim), PSD=True)
    b = cp.Variable(dim)
    constraints = [cp.norm(a @ pts[i] + b) <= 1 for i in range(n)]
    prob = cp.Problem(cp.Minimize(-cp.log_det(a)), constraints)
    prob.solve(solver=cp.SCS, eps=solver_eps, max_iters=20000)
    a_inv = np.linalg.inv(a.value)
    mu = -a_inv @ b.value
    sigma = a_inv @ a_inv.T
    return mu, 0.5 * (sigma + sigma.T)

"""Reference computations that share no code with the package."""

import math

import numpy as np
import torch


def superellipse_polygon(a, b, n, rotation, offset, n_vertices=1_000_000):
    """Dense vertex list from the parametric form |x/a|^n + |y/b|^n = 1."""
    t = 2.0 * np.pi * np.arange(n_vertices) / n_vertices
    c, s = np.cos(t), np.sin(t)
    x = a * np.sign(c) * np.abs(c) ** (2.0 / n)
    y = b * np.sign(s) * np.abs(s) ** (2.0 / n)
    cr, sr = math.cos(rotation), math.sin(rotation)
    return np.stack([offset[0] + cr * x - sr * y, offset[1] + sr * x + cr * y], axis=1)


def polygon_ray_radii(poly, center, angles):
    """Exact ray/edge intersection against a star-shaped polygon."""
    d = poly - center
    alpha = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2.0 * np.pi)
    order = np.argsort(alpha)
    alpha, pts = alpha[order], poly[order]
    alpha = np.concatenate([alpha[-1:] - 2.0 * np.pi, alpha, alpha[:1] + 2.0 * np.pi])
    pts = np.concatenate([pts[-1:], pts, pts[:1]])
    th = np.mod(angles, 2.0 * np.pi)
    k = np.searchsorted(alpha, th, side="right") - 1
    p0, p1 = pts[k], pts[k + 1]
    u = np.stack([np.cos(th), np.sin(th)], axis=1)
    e = p1 - p0
    w = p0 - center

    def cross(a, b):
        return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]

    # center + r u = p0 + s e, solved by cross products
    return cross(w, e) / cross(u, e)


def project_oracle(cam, p):
    """Homogeneous 3x4 projection assembled by hand from K, R, t."""
    f = cam.focal_length_px
    cx, cy = cam.principal_point
    K = np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]])
    Rt = np.column_stack([cam.rotation, cam.translation])
    x = np.column_stack([p, np.ones(len(p))]) @ (K @ Rt).T
    return x[:, :2] / x[:, 2:3]


def mse_oracle(pred, target):
    """Plain scalar loop, independent of numpy reductions."""
    total = 0.0
    n = 0
    for row_p, row_t in zip(np.atleast_2d(pred), np.atleast_2d(target)):
        for p, t in zip(row_p, row_t):
            total += (float(p) - float(t)) ** 2
            n += 1
    return total / n


def fd_gradients(model, x, target, step=1e-5):
    """Central finite differences of the MSE loss for every parameter entry."""
    grads = {}
    xt = torch.as_tensor(x)
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            g = np.empty(flat.numel())
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + step
                up = mse_oracle(model(xt).numpy(), target)
                flat[i] = old - step
                down = mse_oracle(model(xt).numpy(), target)
                flat[i] = old
                g[i] = (up - down) / (2 * step)
            grads[name] = g.reshape(p.shape)
    return grads


def rel_err(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def _median(sorted_vals):
    n = len(sorted_vals)
    return sorted_vals[n // 2] if n % 2 else 0.5 * (sorted_vals[n // 2 - 1] + sorted_vals[n // 2])


def brute_aggregates(err):
    """Aggregates of nested lists of absolute errors, by sorting and counting."""
    flat = sorted(float(v) for row in err for v in row)
    n = len(flat)
    under = sum(1 for v in flat if v < 1.0)
    means = sorted(math.fsum(row) / len(row) for row in err)
    return {
        "min_mm": flat[0],
        "max_mm": flat[-1],
        "mean_mm": math.fsum(flat) / n,
        "median_mm": _median(flat),
        "frac_under_1mm": under / n,
        "n_points": n,
        "n_under_1mm": under,
        "sample_mean_mean_mm": math.fsum(means) / len(means),
        "sample_mean_median_mm": _median(means),
    }

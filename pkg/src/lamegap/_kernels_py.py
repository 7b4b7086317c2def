"""Pure numpy versions of the compiled kernels (same signatures and results)."""
import numpy as np


def size_field(pts, samples, sizes, grade, cap):
    pts = np.ascontiguousarray(pts, dtype=float)
    out = np.full(len(pts), float(cap))
    # chunked brute force; the minimum is the same as the pruned loop's
    step = max(1, 2_000_000 // max(len(samples), 1))
    for lo in range(0, len(pts), step):
        p = pts[lo:lo + step]
        dx = p[:, None, 0] - samples[None, :, 0]
        dy = p[:, None, 1] - samples[None, :, 1]
        v = sizes[None, :] + grade * np.sqrt(dx * dx + dy * dy)
        out[lo:lo + step] = np.minimum(out[lo:lo + step], v.min(axis=1))
    return out


def element_gradients(nodes, tris):
    P = nodes[tris]
    x, y = P[:, :, 0], P[:, :, 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    return b, c, 0.5 * det


def cst_stiffness(b, c, area, lam, mu):
    ne = len(b)
    B = np.zeros((ne, 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    D = np.zeros((ne, 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = lam + 2 * mu
    D[:, 0, 1] = D[:, 1, 0] = lam
    D[:, 2, 2] = mu
    ke = np.einsum("epk,epq,eql->ekl", B, D, B) * area[:, None, None]
    iu = np.triu_indices(6, 1)
    ke[:, iu[1], iu[0]] = ke[:, iu[0], iu[1]]
    return ke

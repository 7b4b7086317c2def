# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: mesh size field and P1 element kernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt


def size_field(const double[:, ::1] pts, const double[:, ::1] samples, const double[::1] sizes,
               double grade, double cap):
    """min(cap, min_j sizes[j] + grade*|pts[i] - samples[j]|).

    ``sizes`` must be sorted ascending; the inner loop stops once no remaining
    sample can beat the current best.
    """
    cdef Py_ssize_t n = pts.shape[0], m = samples.shape[0], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double best, dx, dy, v, px, py
    for i in range(n):
        best = cap
        px = pts[i, 0]
        py = pts[i, 1]
        for j in range(m):
            if sizes[j] >= best:
                break
            dx = px - samples[j, 0]
            dy = py - samples[j, 1]
            v = sizes[j] + grade * sqrt(dx * dx + dy * dy)
            if v < best:
                best = v
        o[i] = best
    return out


def element_gradients(const double[:, ::1] nodes, const cnp.int64_t[:, ::1] tris):
    """Shape-function gradients (b, c) and signed areas of P1 triangles."""
    cdef Py_ssize_t ne = tris.shape[0], e
    b_arr = np.empty((ne, 3))
    c_arr = np.empty((ne, 3))
    a_arr = np.empty(ne)
    cdef double[:, ::1] b = b_arr
    cdef double[:, ::1] c = c_arr
    cdef double[::1] area = a_arr
    cdef double x0, x1, x2, y0, y1, y2, det
    for e in range(ne):
        x0 = nodes[tris[e, 0], 0]; y0 = nodes[tris[e, 0], 1]
        x1 = nodes[tris[e, 1], 0]; y1 = nodes[tris[e, 1], 1]
        x2 = nodes[tris[e, 2], 0]; y2 = nodes[tris[e, 2], 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        b[e, 0] = (y1 - y2) / det
        b[e, 1] = (y2 - y0) / det
        b[e, 2] = (y0 - y1) / det
        c[e, 0] = (x2 - x1) / det
        c[e, 1] = (x0 - x2) / det
        c[e, 2] = (x1 - x0) / det
        area[e] = 0.5 * det
    return b_arr, c_arr, a_arr


def cst_stiffness(const double[:, ::1] b, const double[:, ::1] c, const double[::1] area,
                  const double[::1] lam, const double[::1] mu):
    """Constant-strain element matrices, dof order (u0x, u0y, u1x, ...).

    Only the upper triangle is computed and then mirrored, so each matrix is
    symmetric bit for bit.
    """
    cdef Py_ssize_t ne = b.shape[0], e, k, l, p, q
    ke_arr = np.empty((ne, 6, 6))
    cdef double[:, :, ::1] ke = ke_arr
    cdef double B[3][6]
    cdef double D[3][3]
    cdef double s, lm, mm, a
    for e in range(ne):
        lm = lam[e]; mm = mu[e]; a = area[e]
        for k in range(3):
            B[0][2 * k] = b[e, k]; B[0][2 * k + 1] = 0.0
            B[1][2 * k] = 0.0; B[1][2 * k + 1] = c[e, k]
            B[2][2 * k] = c[e, k]; B[2][2 * k + 1] = b[e, k]
        D[0][0] = lm + 2 * mm; D[0][1] = lm; D[0][2] = 0.0
        D[1][0] = lm; D[1][1] = lm + 2 * mm; D[1][2] = 0.0
        D[2][0] = 0.0; D[2][1] = 0.0; D[2][2] = mm
        for k in range(6):
            for l in range(k, 6):
                s = 0.0
                for p in range(3):
                    for q in range(3):
                        s += B[p][k] * D[p][q] * B[q][l]
                ke[e, k, l] = s * a
                ke[e, l, k] = s * a
    return ke_arr

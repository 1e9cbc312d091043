# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched RK4 kernels for the two named plants.

Same arithmetic as ``_reference.py``, specialized per system with the
state unrolled into scalars.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


cdef inline void _pendulum_rhs(
    double th1, double th2, double w1, double w2,
    double u1, double u2,
    double m1, double m2, double l1, double l2, double g,
    double *out,
) noexcept nogil:
    cdef double c12 = cos(th1 - th2)
    cdef double s12 = sin(th1 - th2)
    cdef double a11 = (m1 + m2) * l1 * l1
    cdef double a12 = m2 * l1 * l2 * c12
    cdef double a22 = m2 * l2 * l2
    cdef double det = a11 * a22 - a12 * a12
    cdef double k = m2 * l1 * l2 * s12
    cdef double r1 = u1 - (k * w2 * w2 + (m1 + m2) * g * l1 * sin(th1))
    cdef double r2 = u2 - (-k * w1 * w1 + m2 * g * l2 * sin(th2))
    out[0] = w1
    out[1] = w2
    out[2] = (a22 * r1 - a12 * r2) / det
    out[3] = (a11 * r2 - a12 * r1) / det


def pendulum_flow(
    cnp.ndarray x_in,
    cnp.ndarray u_in,
    double dt,
    int substeps,
    double m1, double m2, double l1, double l2, double g,
):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.array(x_in, dtype=np.float64, order="C")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef Py_ssize_t nb = x.shape[0]
    cdef double h = dt / substeps
    cdef double[4] s, y, k1, k2, k3, k4
    cdef double u1, u2
    cdef Py_ssize_t i, j, step
    with nogil:
        for i in range(nb):
            for j in range(4):
                s[j] = x[i, j]
            u1 = u[i, 0]
            u2 = u[i, 1]
            for step in range(substeps):
                _pendulum_rhs(s[0], s[1], s[2], s[3], u1, u2, m1, m2, l1, l2, g, k1)
                for j in range(4):
                    y[j] = s[j] + 0.5 * h * k1[j]
                _pendulum_rhs(y[0], y[1], y[2], y[3], u1, u2, m1, m2, l1, l2, g, k2)
                for j in range(4):
                    y[j] = s[j] + 0.5 * h * k2[j]
                _pendulum_rhs(y[0], y[1], y[2], y[3], u1, u2, m1, m2, l1, l2, g, k3)
                for j in range(4):
                    y[j] = s[j] + h * k3[j]
                _pendulum_rhs(y[0], y[1], y[2], y[3], u1, u2, m1, m2, l1, l2, g, k4)
                for j in range(4):
                    s[j] = s[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            for j in range(4):
                x[i, j] = s[j]
    return x


cdef inline void _quadrotor_rhs(
    double *s, double u1, double u2, double u3, double u4,
    double m, double ixx, double iyy, double izz, double g,
    double *out,
) noexcept nogil:
    cdef double c1 = cos(s[3])
    cdef double s1 = sin(s[3])
    cdef double c2 = cos(s[4])
    cdef double s2 = sin(s[4])
    cdef double c3 = cos(s[5])
    cdef double s3 = sin(s[5])
    cdef double tz = s[13] / m
    out[0] = s[6]
    out[1] = s[7]
    out[2] = s[8]
    out[3] = s[9]
    out[4] = s[10]
    out[5] = s[11]
    out[6] = tz * (c1 * s2 * c3 + s1 * s3)
    out[7] = tz * (s1 * s2 * c3 - c1 * s3)
    out[8] = tz * (c2 * c3) - g
    out[9] = (ixx - iyy) / izz * s[10] * s[11] + u2 / izz
    out[10] = (izz - ixx) / iyy * s[9] * s[11] + u3 / iyy
    out[11] = (iyy - izz) / ixx * s[9] * s[10] + u4 / ixx
    out[12] = u1
    out[13] = s[12]


def quadrotor_flow(
    cnp.ndarray x_in,
    cnp.ndarray u_in,
    double dt,
    int substeps,
    double m, double ixx, double iyy, double izz, double g,
):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.array(x_in, dtype=np.float64, order="C")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef Py_ssize_t nb = x.shape[0]
    cdef double h = dt / substeps
    cdef double[14] s, y, k1, k2, k3, k4
    cdef double u1, u2, u3, u4
    cdef Py_ssize_t i, j, step
    with nogil:
        for i in range(nb):
            for j in range(14):
                s[j] = x[i, j]
            u1 = u[i, 0]
            u2 = u[i, 1]
            u3 = u[i, 2]
            u4 = u[i, 3]
            for step in range(substeps):
                _quadrotor_rhs(s, u1, u2, u3, u4, m, ixx, iyy, izz, g, k1)
                for j in range(14):
                    y[j] = s[j] + 0.5 * h * k1[j]
                _quadrotor_rhs(y, u1, u2, u3, u4, m, ixx, iyy, izz, g, k2)
                for j in range(14):
                    y[j] = s[j] + 0.5 * h * k2[j]
                _quadrotor_rhs(y, u1, u2, u3, u4, m, ixx, iyy, izz, g, k3)
                for j in range(14):
                    y[j] = s[j] + h * k3[j]
                _quadrotor_rhs(y, u1, u2, u3, u4, m, ixx, iyy, izz, g, k4)
                for j in range(14):
                    s[j] = s[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            for j in range(14):
                x[i, j] = s[j]
    return x

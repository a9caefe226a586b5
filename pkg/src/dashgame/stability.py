"""Local stability analysis of the distributed rate-update map.

The update ``r_i(t+1) = r_i(t) + theta_i * r_i(t) * grad_i(r(t))`` is a
discrete-time map whose fixed points are the game's stationary rates; the
equilibrium is locally stable iff every eigenvalue of the map's Jacobian
lies strictly inside the unit circle.  This module builds the 2-user
Jacobian analytically, an N-user Jacobian by central differences, computes
eigenvalues of small dense matrices (closed form for 2x2, Hessenberg
reduction plus shifted QR above that), and evaluates the closed-form
unit-circle conditions for two identical users.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import BufferView, GameParams, VideoQualityModel, utility_gradient
from .game import foc_coefficients

__all__ = [
    "StabilityReport",
    "EigenvalueError",
    "jacobian_2user",
    "jacobian_numeric",
    "eigenvalues_small",
    "spectral_radius",
    "build_report",
    "stability_conditions_identical_2user",
]

MAX_EIG_SIZE = 64
#: |spectral radius - 1| below this is reported as "marginal" rather than
#: stable/unstable; the strict classification is meaningless at the boundary.
MARGINAL_BAND = 1e-9


class EigenvalueError(RuntimeError):
    """QR iteration failed to converge within the iteration budget."""


@dataclass
class StabilityReport:
    """Jacobian, spectrum, and verdict for one operating point."""

    jacobian: np.ndarray
    eigenvalues: list[complex]
    spectral_radius: float
    stable: bool
    verdict: str
    closed_form: Optional[tuple[bool, bool]] = None


def jacobian_2user(
    params: GameParams,
    models: Sequence[VideoQualityModel],
    bufs: Sequence[BufferView],
    export_bw: float,
    rates: Sequence[float],
    thetas: Sequence[float],
) -> np.ndarray:
    """Analytic Jacobian of the unclamped update map for exactly two users.

    Off-diagonals are ``-theta_i * z3 * r_i``; diagonal ``i`` is
    ``1 + theta_i * (-beta_i*z1_i*r_i/(1+beta_i*r_i)^2 + z1_i/(1+beta_i*r_i)
    + z2_i - z3*(2*r_i + r_j))``.
    """
    if not (len(models) == len(bufs) == len(rates) == len(thetas) == 2):
        raise ValueError("jacobian_2user requires exactly two users")
    jac = np.empty((2, 2))
    for i in range(2):
        j = 1 - i
        z = foc_coefficients(params, models[i], bufs[i], export_bw)
        beta = models[i].beta
        r_i, r_j = rates[i], rates[j]
        denom = 1.0 + beta * r_i
        own = (
            -beta * z.z1 * r_i / (denom * denom)
            + z.z1 / denom
            + z.z2
            - z.z3 * (2.0 * r_i + r_j)
        )
        jac[i, i] = 1.0 + thetas[i] * own
        jac[i, j] = -thetas[i] * z.z3 * r_i
    return jac


def _update_map(
    params: GameParams,
    models: Sequence[VideoQualityModel],
    bufs: Sequence[BufferView],
    export_bw: float,
    rates: Sequence[float],
    thetas: Sequence[float],
) -> list[float]:
    """One unclamped update step (no step cap, no box projection)."""
    return [
        r + theta * r * utility_gradient(params, m, i, rates, b, export_bw)
        for i, (r, theta, m, b) in enumerate(zip(rates, thetas, models, bufs))
    ]


def jacobian_numeric(
    params: GameParams,
    models: Sequence[VideoQualityModel],
    bufs: Sequence[BufferView],
    export_bw: float,
    rates: Sequence[float],
    thetas: Sequence[float],
    step: float = 1e-6,
) -> np.ndarray:
    """Jacobian of the unclamped update map by central differences."""
    n = len(rates)
    if not (len(models) == len(bufs) == len(thetas) == n >= 1):
        raise ValueError("models, bufs, rates, thetas must agree and be nonempty")
    jac = np.empty((n, n))
    for j in range(n):
        plus = list(rates)
        minus = list(rates)
        plus[j] += step
        minus[j] -= step
        f_plus = _update_map(params, models, bufs, export_bw, plus, thetas)
        f_minus = _update_map(params, models, bufs, export_bw, minus, thetas)
        for i in range(n):
            jac[i, j] = (f_plus[i] - f_minus[i]) / (2.0 * step)
    return jac


# ---------------------------------------------------------------------------
# small dense eigenvalues
# ---------------------------------------------------------------------------

def _eig_2x2(m: np.ndarray) -> list[complex]:
    a, b = complex(m[0, 0]), complex(m[0, 1])
    c, d = complex(m[1, 0]), complex(m[1, 1])
    trace = a + d
    disc = (a - d) * (a - d) + 4.0 * b * c
    root = cmath.sqrt(disc)
    return [(trace + root) / 2.0, (trace - root) / 2.0]


def _hessenberg(a: np.ndarray) -> np.ndarray:
    """Reduce to upper Hessenberg form by Householder reflections."""
    h = a.astype(complex).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        norm = np.linalg.norm(x)
        if norm == 0.0:
            continue
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += phase * norm
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        # H <- (I - 2 v v*) H (I - 2 v v*)
        h[k + 1:, k:] -= 2.0 * np.outer(v, v.conj() @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v.conj())
    return h


def _wilkinson_shift(h: np.ndarray, m: int) -> complex:
    """Eigenvalue of the trailing 2x2 block closest to the corner entry."""
    a = h[m - 2, m - 2]
    b = h[m - 2, m - 1]
    c = h[m - 1, m - 2]
    d = h[m - 1, m - 1]
    trace = a + d
    root = cmath.sqrt((a - d) * (a - d) + 4.0 * b * c)
    l1 = (trace + root) / 2.0
    l2 = (trace - root) / 2.0
    return l1 if abs(l1 - d) <= abs(l2 - d) else l2


def _qr_step(h: np.ndarray, lo: int, hi: int, shift: complex) -> None:
    """One shifted QR sweep on the active window h[lo:hi, lo:hi], in place.

    Givens rotations zero the subdiagonal of (H - shift*I); applying them
    from the right afterwards restores Hessenberg structure (RQ + shift*I).
    """
    for k in range(lo, hi):
        h[k, k] -= shift
    rotations = []
    for k in range(lo, hi - 1):
        a, b = h[k, k], h[k + 1, k]
        r = math.hypot(abs(a), abs(b))
        if r == 0.0:
            c, s = 1.0 + 0.0j, 0.0 + 0.0j
        else:
            c, s = a / r, b / r
        rotations.append((c, s))
        row_k = h[k, k:hi].copy()
        row_k1 = h[k + 1, k:hi].copy()
        h[k, k:hi] = c.conjugate() * row_k + s.conjugate() * row_k1
        h[k + 1, k:hi] = -s * row_k + c * row_k1
    for k, (c, s) in enumerate(rotations, start=lo):
        col_k = h[lo:min(k + 2, hi), k].copy()
        col_k1 = h[lo:min(k + 2, hi), k + 1].copy()
        h[lo:min(k + 2, hi), k] = col_k * c + col_k1 * s
        h[lo:min(k + 2, hi), k + 1] = -col_k * s.conjugate() + col_k1 * c.conjugate()
    for k in range(lo, hi):
        h[k, k] += shift


def eigenvalues_small(matrix, tol: float = 1e-10) -> list[complex]:
    """Eigenvalues of a small dense matrix, descending in magnitude.

    2x2 inputs use the characteristic-polynomial closed form; larger ones go
    through Hessenberg reduction and shifted (complex Wilkinson) QR with
    bottom-up deflation.  Raises :class:`EigenvalueError` if the iteration
    has not converged after 100*N sweeps.
    """
    a = np.asarray(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    n = a.shape[0]
    if n < 1:
        raise ValueError("matrix must be at least 1x1")
    if n > MAX_EIG_SIZE:
        raise ValueError(f"matrix order {n} exceeds the supported maximum {MAX_EIG_SIZE}")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")

    if n == 1:
        eigs = [complex(a[0, 0])]
    elif n == 2:
        eigs = _eig_2x2(a)
    else:
        h = _hessenberg(a)
        scale = max(float(np.abs(h).max()), 1.0)
        eigs = []
        m = n
        sweeps = 0
        budget = 100 * n
        while m > 0:
            if m == 1:
                eigs.append(complex(h[0, 0]))
                m = 0
                continue
            # deflate negligible bottom subdiagonals
            sub = abs(h[m - 1, m - 2])
            if sub <= tol * max(abs(h[m - 1, m - 1]) + abs(h[m - 2, m - 2]), scale * 1e-3):
                eigs.append(complex(h[m - 1, m - 1]))
                m -= 1
                continue
            if m >= 3 and abs(h[m - 2, m - 3]) <= tol * max(
                abs(h[m - 2, m - 2]) + abs(h[m - 3, m - 3]), scale * 1e-3
            ):
                eigs.extend(_eig_2x2(h[m - 2:m, m - 2:m]))
                m -= 2
                continue
            # find the top of the active unreduced window
            lo = m - 1
            while lo > 0 and abs(h[lo, lo - 1]) > tol * max(
                abs(h[lo, lo]) + abs(h[lo - 1, lo - 1]), scale * 1e-3
            ):
                lo -= 1
            if sweeps >= budget:
                raise EigenvalueError(
                    f"QR iteration did not converge within {budget} sweeps (order {n})"
                )
            shift = _wilkinson_shift(h, m)
            if sweeps % 17 == 16:
                # rare stagnation breaker: exceptional ad-hoc shift
                shift = h[m - 1, m - 1] + abs(h[m - 1, m - 2])
            _qr_step(h, lo, m, shift)
            sweeps += 1

    eigs.sort(key=lambda z: (-abs(z), -z.real, -z.imag))
    return eigs


def spectral_radius(matrix) -> float:
    return max(abs(z) for z in eigenvalues_small(matrix))


def _verdict(radius: float) -> tuple[bool, str]:
    if abs(radius - 1.0) <= MARGINAL_BAND:
        return False, "marginal"
    return (radius < 1.0), ("stable" if radius < 1.0 else "unstable")


def build_report(jacobian: np.ndarray, closed_form: Optional[tuple[bool, bool]] = None) -> StabilityReport:
    eigs = eigenvalues_small(jacobian)
    radius = max(abs(z) for z in eigs)
    stable, verdict = _verdict(radius)
    return StabilityReport(
        jacobian=np.asarray(jacobian, dtype=float),
        eigenvalues=eigs,
        spectral_radius=radius,
        stable=stable,
        verdict=verdict,
        closed_form=closed_form,
    )


# ---------------------------------------------------------------------------
# closed-form conditions for two identical users
# ---------------------------------------------------------------------------
#
# With identical users at a symmetric point (equal rates, equal thetas,
# b_curr = b_ref so z2 = mu*T), the Jacobian is symmetric with eigenvalues
# j11 -/+ j12.  Multiplying the unit-circle bounds through by (1+beta*r)^2
# gives polynomial conditions; the two that bind (the other two are implied)
# are the ones evaluated here.


def _unit_upper_ok(z1: float, z2: float, z3: float, beta: float, r: float) -> bool:
    """lambda < 1 for both eigenvalues: z1 + z2*(1+b r)^2 < 2 z3 r (1+b r)^2."""
    g = (1.0 + beta * r) ** 2
    return z1 + z2 * g < 2.0 * z3 * r * g


def _unit_lower_ok(z1: float, z2: float, z3: float, beta: float, r: float, theta: float) -> bool:
    """lambda > -1 for both eigenvalues: z1 + (z2 + 2/theta)*(1+b r)^2 > 4 z3 r (1+b r)^2."""
    g = (1.0 + beta * r) ** 2
    return z1 + (z2 + 2.0 / theta) * g > 4.0 * z3 * r * g


def stability_conditions_identical_2user(
    params: GameParams,
    model: VideoQualityModel,
    theta: float,
    r_star: float,
    export_bw: float,
) -> tuple[tuple[bool, bool], StabilityReport]:
    """Closed-form unit-circle conditions for two identical users.

    Assumes the symmetric operating point of the derivation: both users at
    ``r_star`` with equal ``theta`` and buffers at the reference level (so
    the buffer revenue slope is exactly mu*T).  Returns the two inequality
    flags plus the full eigenvalue-based report for cross checking; the
    verdicts agree for any r_star, not only equilibria, since the algebra
    never uses the stationarity condition.
    """
    if not (math.isfinite(theta) and theta > 0):
        raise ValueError(f"theta must be > 0, got {theta!r}")
    if not (math.isfinite(r_star) and r_star > 0):
        raise ValueError(f"r_star must be > 0, got {r_star!r}")
    buf = BufferView(b_curr=10.0, b_ref=10.0)  # b_curr = b_ref by assumption
    z = foc_coefficients(params, model, buf, export_bw)
    flags = (
        _unit_upper_ok(z.z1, z.z2, z.z3, model.beta, r_star),
        _unit_lower_ok(z.z1, z.z2, z.z3, model.beta, r_star, theta),
    )
    jac = jacobian_2user(
        params, [model, model], [buf, buf], export_bw, [r_star, r_star], [theta, theta]
    )
    return flags, build_report(jac, closed_form=flags)

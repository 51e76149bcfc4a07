"""Phase-plane analysis of the two-variable neuron models.

Nullclines, fixed points, Jacobian eigenvalues, stability classes, sampled
vector fields, and the calculators used to standardize the quadratic model
(stable-origin recovery sensitivity, rheobase).

The membrane nullcline of every quadratic family intersected with the
recovery nullcline reduces to one quadratic ``A u^2 + B u + C = 0``:

* ``sit``/``qif``:  ``A = k``, ``B = -(b + k (u_r + u_c))``,
  ``C = I + b u_r + k u_r u_c`` and the recovery nullcline ``v = b (u - u_r)``.
* ``izhikevich``:   ``A = k``, ``B = 5 - b``, ``C = 140 + I`` with recovery
  nullcline ``v = b u``.

Fixed-point solving is analytic (quadratic formula); eigenvalues come from
the 2x2 trace/determinant characteristic polynomial.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .neurons import (IZH_CONSTANT, IZH_LINEAR, IZHIKEVICH, LIF, QIF, SIT,
                      NeuronParams)

STABLE_NODE = "stable_node"
STABLE_FOCUS = "stable_focus"
UNSTABLE = "unstable"
SADDLE = "saddle"
DEGENERATE = "degenerate"

#: Eigenvalue real parts within this of zero are never silently stable.
DEGENERATE_TOL = 1e-9

#: |I - rheobase| below this collapses the two intersections into one.
FOLD_INPUT_TOL = 1e-9

_QUADRATIC_FAMILIES = (SIT, QIF, IZHIKEVICH)


@dataclass(frozen=True)
class FixedPoint:
    """A nullcline intersection with its local linearization."""

    u: float
    v: float
    eigenvalues: tuple[complex, complex]
    classification: str

    @property
    def is_stable(self) -> bool:
        return self.classification in (STABLE_NODE, STABLE_FOCUS)


class Rheobase(NamedTuple):
    current: float
    coincide_voltage: float


@dataclass
class PhasePortrait:
    """Sampled vector field plus nullclines and fixed points.

    ``du``/``dv`` are evaluated row-major over ``(u_grid, v_grid)``: entry
    ``[i, j]`` belongs to ``(u_grid[i], v_grid[j])``.  Nullcline arrays have
    shape ``(samples, 2)`` with columns ``(u, v)``.
    """

    u_grid: np.ndarray
    v_grid: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    u_nullcline: np.ndarray
    v_nullcline: np.ndarray
    fixed_points: list[FixedPoint]


def rhs(params: NeuronParams, u, v, current: float):
    """Continuous right-hand side (du/dt, dv/dt) of a model; vectorizable."""
    tau = params.tau
    if params.family == LIF:
        return (-(u - params.u_reset) + current) / tau, np.zeros_like(np.asarray(v, dtype=float))
    if params.family == QIF:
        du = (params.k * (u - params.u_r) * (u - params.u_c) + current) / tau
        return du, np.zeros_like(np.asarray(v, dtype=float))
    if params.family == SIT:
        du = (params.k * (u - params.u_r) * (u - params.u_c) - v + current) / tau
        dv = params.a * (params.b * (u - params.u_r) - v) / tau
        return du, dv
    du = (params.k * u * u + IZH_LINEAR * u + IZH_CONSTANT - v + current) / tau
    dv = params.a * (params.b * u - v) / tau
    return du, dv


def membrane_quadratic(params: NeuronParams, current: float) -> tuple[float, float, float]:
    """Coefficients (A, B, C) of the fixed-point quadratic in u."""
    if params.family not in _QUADRATIC_FAMILIES:
        raise ValueError(f"{params.family} has no quadratic membrane drift")
    if params.k == 0:
        raise ValueError("k = 0: not a quadratic model")
    if params.family == IZHIKEVICH:
        return params.k, IZH_LINEAR - params.b, IZH_CONSTANT + current
    a = params.k
    b = -(params.b + params.k * (params.u_r + params.u_c))
    c = current + params.b * params.u_r + params.k * params.u_r * params.u_c
    return a, b, c


def recovery_nullcline(params: NeuronParams, u):
    """v on the recovery nullcline at membrane value(s) u."""
    if params.family == IZHIKEVICH:
        return params.b * np.asarray(u, dtype=float)
    return params.b * (np.asarray(u, dtype=float) - params.u_r)


def membrane_nullcline(params: NeuronParams, u, current: float):
    """v on the membrane nullcline at membrane value(s) u."""
    u = np.asarray(u, dtype=float)
    if params.family == IZHIKEVICH:
        return params.k * u * u + IZH_LINEAR * u + IZH_CONSTANT + current
    return params.k * (u - params.u_r) * (u - params.u_c) + current


def nullclines(params: NeuronParams, current: float,
               u_range: tuple[float, float],
               samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample both nullclines over ``u_range``.

    Returns (membrane_curve, recovery_curve), each of shape (samples, 2)
    with columns (u, v).
    """
    if samples < 2:
        raise ValueError(f"samples must be >= 2, got {samples}")
    lo, hi = u_range
    if not hi > lo:
        raise ValueError(f"empty u range: [{lo}, {hi}]")
    u = np.linspace(lo, hi, samples)
    membrane = np.column_stack([u, membrane_nullcline(params, u, current)])
    recovery = np.column_stack([u, recovery_nullcline(params, u)])
    return membrane, recovery


def _jacobian(params: NeuronParams, u: float) -> np.ndarray:
    tau = params.tau
    if params.family == IZHIKEVICH:
        duu = (2.0 * params.k * u + IZH_LINEAR) / tau
    else:
        duu = params.k * (2.0 * u - params.u_r - params.u_c) / tau
    return np.array([[duu, -1.0 / tau],
                     [params.a * params.b / tau, -params.a / tau]])


def _eigenvalues(jac: np.ndarray) -> tuple[complex, complex]:
    trace = jac[0, 0] + jac[1, 1]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    root = cmath.sqrt(trace * trace / 4.0 - det)
    return trace / 2.0 - root, trace / 2.0 + root


def _classify(eigenvalues: tuple[complex, complex],
              one_dimensional: bool = False) -> str:
    if one_dimensional:
        lam = eigenvalues[0].real
        if abs(lam) <= DEGENERATE_TOL:
            return DEGENERATE
        return STABLE_NODE if lam < 0 else UNSTABLE
    re = sorted(lam.real for lam in eigenvalues)
    if any(abs(r) <= DEGENERATE_TOL for r in re):
        return DEGENERATE
    if re[1] < 0:
        has_imag = any(abs(lam.imag) > 0 for lam in eigenvalues)
        return STABLE_FOCUS if has_imag else STABLE_NODE
    if re[0] > 0:
        return UNSTABLE
    return SADDLE


def classify_fixed_point(params: NeuronParams, point: tuple[float, float],
                         current: float, tol: float = 1e-6) -> FixedPoint:
    """Eigenvalues and stability class of a nullcline intersection.

    Rejects points whose residual against either nullcline exceeds ``tol``.
    One-dimensional families (``qif`` with no recovery coupling) classify on
    the membrane eigenvalue alone; the recovery eigenvalue is reported as 0.
    """
    u, v = float(point[0]), float(point[1])
    res_m = abs(v - float(membrane_nullcline(params, u, current)))
    res_r = abs(v - float(recovery_nullcline(params, u)))
    if res_m > tol or res_r > tol:
        raise ValueError(
            f"point ({u}, {v}) off nullclines: residuals "
            f"membrane={res_m:.3e}, recovery={res_r:.3e} exceed {tol:.1e}")
    one_dimensional = params.a == 0.0
    if one_dimensional:
        lam = float(_jacobian(params, u)[0, 0])
        eigenvalues: tuple[complex, complex] = (complex(lam), 0j)
    else:
        eigenvalues = _eigenvalues(_jacobian(params, u))
    return FixedPoint(u=u, v=v, eigenvalues=eigenvalues,
                      classification=_classify(eigenvalues, one_dimensional))


def fixed_points(params: NeuronParams, current: float) -> list[FixedPoint]:
    """Nullcline intersections sorted by membrane value.

    0, 1 or 2 points depending on the sign of the quadratic discriminant;
    inputs within :data:`FOLD_INPUT_TOL` of the rheobase current yield the
    single coincident (degenerate) point.
    """
    a, b, c = membrane_quadratic(params, current)
    disc = b * b - 4.0 * a * c
    fold_tol = abs(4.0 * a) * FOLD_INPUT_TOL
    if abs(disc) <= fold_tol:
        u = -b / (2.0 * a)
        v = float(recovery_nullcline(params, u))
        jac = _jacobian(params, u)
        return [FixedPoint(u=u, v=v, eigenvalues=_eigenvalues(jac),
                           classification=DEGENERATE)]
    if disc < 0:
        return []
    root = math.sqrt(disc)
    lo = (-b - root) / (2.0 * a)
    hi = (-b + root) / (2.0 * a)
    points = []
    for u in sorted((lo, hi)):
        v = float(recovery_nullcline(params, u))
        points.append(classify_fixed_point(params, (u, v), current, tol=math.inf))
    return points


def rheobase(params: NeuronParams) -> Rheobase:
    """Fold input current and the membrane value where the intersections meet.

    Below this current the quadratic has two roots; above it none, which is
    what enables sustained firing.
    """
    if params.family not in _QUADRATIC_FAMILIES or not params.k > 0:
        raise ValueError("rheobase requires a quadratic model with k > 0")
    a, b, c0 = membrane_quadratic(params, 0.0)
    current = (b * b - 4.0 * a * c0) / (4.0 * a)
    coincide_voltage = -b / (2.0 * a)
    return Rheobase(current=current, coincide_voltage=coincide_voltage)


def stable_origin_b(params: NeuronParams, current: float) -> float:
    """Recovery sensitivity that places a fixed point at the origin.

    Solves the fixed-point quadratic's constant term for b so that u = 0 is
    a root: ``b = -(I + k u_r u_c) / u_r``.  With the built-in standardized
    voltages (k=1, u_r=-0.05, u_c=1) this reduces to ``b = 20 I - 1``.
    """
    if params.family not in (SIT, QIF):
        raise ValueError("stable_origin_b applies to standardized quadratic "
                         f"models, not {params.family}")
    if params.u_r == 0:
        raise ValueError("u_r = 0: the origin constraint fixes the input "
                         "current instead of b")
    return -(current + params.k * params.u_r * params.u_c) / params.u_r


def vector_field(params: NeuronParams, current: float,
                 u_bounds: tuple[float, float], v_bounds: tuple[float, float],
                 resolution: tuple[int, int] = (32, 32),
                 nullcline_samples: int = 256) -> PhasePortrait:
    """Evaluate the model's right-hand side over a (u, v) grid.

    For one-dimensional families (``lif``) the recovery axis is inert and
    nullcline arrays are empty; the single drift equilibrium is reported as
    the fixed point.
    """
    res_u, res_v = resolution
    if res_u < 2 or res_v < 2:
        raise ValueError(f"resolution must be >= 2 per axis, got {resolution}")
    if not u_bounds[1] > u_bounds[0] or not v_bounds[1] > v_bounds[0]:
        raise ValueError(f"degenerate bounds: u={u_bounds}, v={v_bounds}")
    u_grid = np.linspace(u_bounds[0], u_bounds[1], res_u)
    v_grid = np.linspace(v_bounds[0], v_bounds[1], res_v)
    uu, vv = np.meshgrid(u_grid, v_grid, indexing="ij")
    du, dv = rhs(params, uu, vv, current)
    du = np.broadcast_to(np.asarray(du, dtype=float), uu.shape).copy()
    dv = np.broadcast_to(np.asarray(dv, dtype=float), uu.shape).copy()

    if params.family == LIF:
        u_star = params.u_reset + current
        point = FixedPoint(u=u_star, v=0.0,
                           eigenvalues=(complex(-1.0 / params.tau), 0j),
                           classification=STABLE_NODE)
        return PhasePortrait(u_grid=u_grid, v_grid=v_grid, du=du, dv=dv,
                             u_nullcline=np.empty((0, 2)),
                             v_nullcline=np.empty((0, 2)),
                             fixed_points=[point])

    membrane, recovery = nullclines(params, current, u_bounds,
                                    nullcline_samples)
    return PhasePortrait(u_grid=u_grid, v_grid=v_grid, du=du, dv=dv,
                         u_nullcline=membrane, v_nullcline=recovery,
                         fixed_points=fixed_points(params, current))

"""Density-based compliance minimization with optimality-criteria updates.

The iteration loop is the classic one: solve equilibrium, form element
sensitivities, smooth them with the mesh-independency filter, then move
densities with the damped multiplicative update under a volume constraint
enforced through bisection on the Lagrange multiplier.  Per-element bounds
support passive (pinned void) and active (pinned solid) regions as well as
spatially varying volume budgets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import (
    DensityField,
    DesignDomain,
    ElementStiffness,
    LinearSystem,
    ParameterError,
    SingularSystemError,
    assemble_global,
    compliance,
    element_stiffness,
    element_strain_energies,
    solve_equilibrium,
)
from .scenarios import Scenario, scenario_to_system

VOLUME_TOL = 1e-4
_LAMBDA_LO = 1e-9
_LAMBDA_HI = 1e9
_MAX_BISECT = 500


class ConvergenceError(RuntimeError):
    """An iterative step failed to reach its tolerance."""


class OptimizationError(RuntimeError):
    """The optimization loop aborted; carries the failing iteration."""

    def __init__(self, message: str, iteration: int, scenario: Scenario | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.scenario = scenario


@dataclass(frozen=True)
class SimpConfig:
    """Optimizer settings; defaults follow the common academic conventions."""

    penal: float = 3.0
    move: float = 0.2
    damping: float = 0.5
    rmin: float = 1.5
    volfrac: float = 0.4
    max_iters: int = 200
    change_tol: float = 0.01
    x_min: float = 1e-3
    young: float = 1.0
    poisson: float = 0.3
    solver: str = "direct"

    def __post_init__(self):
        if self.penal < 3:
            raise ParameterError(
                f"penalization must be >= 3 for a physically valid design, got {self.penal}"
            )
        if not (0 < self.move < 1):
            raise ParameterError(f"move limit must lie in (0, 1), got {self.move}")
        if self.rmin < 0:
            raise ParameterError(f"filter radius must be >= 0, got {self.rmin}")
        if not (0 < self.x_min < self.volfrac < 1):
            raise ParameterError(
                f"need 0 < x_min < volfrac < 1, got x_min={self.x_min}, volfrac={self.volfrac}"
            )
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class DensityBounds:
    """Per-element box constraints; passive elements have upper = x_min, active lower = 1."""

    lower: np.ndarray
    upper: np.ndarray
    x_min: float = 1e-3

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape:
            raise ParameterError("bound fields must share a shape")
        if np.any(lower < self.x_min - 1e-12) or np.any(upper > 1.0 + 1e-12):
            raise ParameterError("bounds must lie inside [x_min, 1]")
        if np.any(lower > upper + 1e-12):
            raise ParameterError("lower bound exceeds upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def free(cls, domain: DesignDomain, x_min: float = 1e-3) -> "DensityBounds":
        shape = (domain.ny, domain.nx)
        return cls(np.full(shape, x_min), np.ones(shape), x_min=x_min)

    def _disk_mask(self, cx: float, cy: float, radius: float) -> np.ndarray:
        ny, nx = self.lower.shape
        ex, ey = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5)
        return (ex - cx) ** 2 + (ey - cy) ** 2 <= radius**2

    def with_passive_disk(self, cx: float, cy: float, radius: float) -> "DensityBounds":
        """Pin a disk of elements (centers within radius of (cx, cy)) to void."""
        mask = self._disk_mask(cx, cy, radius)
        lower = np.where(mask, self.x_min, self.lower)
        upper = np.where(mask, self.x_min, self.upper)
        return DensityBounds(lower, upper, x_min=self.x_min)

    def with_active_disk(self, cx: float, cy: float, radius: float) -> "DensityBounds":
        """Pin a disk of elements to solid."""
        mask = self._disk_mask(cx, cy, radius)
        lower = np.where(mask, 1.0, self.lower)
        upper = np.where(mask, 1.0, self.upper)
        return DensityBounds(lower, upper, x_min=self.x_min)


@dataclass(frozen=True)
class OcUpdate:
    """Result of one volume-targeted density update."""

    density: DensityField
    lagrange: float
    volume: float
    clamped_positive: int
    degenerate: bool = False
    volume_feasible: bool = True


@dataclass
class OptimizationTrace:
    """Per-iteration history plus the final field.

    compliances[k] is the compliance of the field the k-th solve ran on;
    volumes[k] and changes[k] describe the field after the k-th update.
    final_compliance is a separate solve on the final field.
    """

    compliances: list[float] = field(default_factory=list)
    volumes: list[float] = field(default_factory=list)
    changes: list[float] = field(default_factory=list)
    final_density: DensityField | None = None
    final_compliance: float = float("nan")
    iterations: int = 0
    converged: bool = False
    volume_feasible: bool = True
    clamped_positive: int = 0

    def validate(self, target: float) -> None:
        if self.final_density is None:
            raise ConvergenceError("trace has no final field")
        if self.volume_feasible:
            vol = self.final_density.volume_fraction
            if vol > target + 1e-3:
                raise ConvergenceError(
                    f"final volume fraction {vol:.6f} exceeds target {target:.6f} + 1e-3"
                )


def sensitivities(
    density: DensityField,
    U: np.ndarray,
    k0: ElementStiffness,
    penal: float,
    domain: DesignDomain | None = None,
) -> np.ndarray:
    """Compliance gradient -penal * x^(penal-1) * u_e^T k0 u_e, shape (ny, nx)."""
    ny, nx = density.values.shape
    domain = domain or DesignDomain(nx, ny)
    if (domain.ny, domain.nx) != (ny, nx):
        raise ParameterError("density shape does not match domain")
    ce = element_strain_energies(domain, U, k0)
    return -penal * density.values ** (penal - 1) * ce


def filter_weights(nx: int, ny: int, rmin: float) -> tuple[sp.csr_matrix, np.ndarray]:
    """Sparse convolution weights max(0, rmin - dist) between element centers.

    Returns (H, Hs) with Hs the per-element weight sums; boundary elements
    normalize over their truncated neighborhoods.
    """
    n = nx * ny
    if rmin <= 0:
        eye = sp.identity(n, format="csr")
        return eye, np.ones(n)
    reach = int(np.ceil(rmin))
    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny))
    ex = ex.ravel()
    ey = ey.ravel()
    e = ey * nx + ex
    rows, cols, vals = [], [], []
    for dj in range(-reach, reach + 1):
        for di in range(-reach, reach + 1):
            w = rmin - np.hypot(di, dj)
            if w <= 0:
                continue
            ok = (ex + di >= 0) & (ex + di < nx) & (ey + dj >= 0) & (ey + dj < ny)
            rows.append(e[ok])
            cols.append((ey[ok] + dj) * nx + (ex[ok] + di))
            vals.append(np.full(int(ok.sum()), w))
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    Hs = np.asarray(H.sum(axis=1)).ravel()
    return H, Hs


def apply_sensitivity_filter(
    density: DensityField,
    raw: np.ndarray,
    H: sp.csr_matrix,
    Hs: np.ndarray,
) -> np.ndarray:
    """Weighted average (H @ (x * dc)) / (x * Hs), preserving shape."""
    x = density.values
    if np.any(x < density.x_min - 1e-12):
        raise ParameterError("density below x_min; filter normalization would blow up")
    raw = np.asarray(raw, dtype=float)
    if raw.shape != x.shape:
        raise ParameterError(f"sensitivity shape {raw.shape} does not match {x.shape}")
    num = H @ (x * raw).ravel()
    return (num / (x.ravel() * Hs)).reshape(x.shape)


def filter_sensitivities(density: DensityField, raw: np.ndarray, rmin: float) -> np.ndarray:
    """Mesh-independency filter; the identity whenever rmin <= 1."""
    if rmin < 0:
        raise ParameterError(f"filter radius must be >= 0, got {rmin}")
    ny, nx = density.values.shape
    H, Hs = filter_weights(nx, ny, rmin)
    return apply_sensitivity_filter(density, raw, H, Hs)


def oc_step(
    x: np.ndarray,
    filtered: np.ndarray,
    lam: float,
    config: SimpConfig,
    bounds: DensityBounds,
) -> np.ndarray:
    """Single damped multiplicative update at a fixed Lagrange multiplier.

    The candidate x * ((-dc/dx) / lam)^damping is clipped to the move
    interval [max(x_min, x - move), min(1, x + move)], then into the
    per-element bounds (so pinned elements stay pinned).
    """
    beta = np.maximum(-np.asarray(filtered, dtype=float), 0.0) / lam
    cand = x * beta**config.damping
    lo_move = np.maximum(x - config.move, config.x_min)
    hi_move = np.minimum(x + config.move, 1.0)
    out = np.minimum(np.maximum(cand, lo_move), hi_move)
    return np.minimum(np.maximum(out, bounds.lower), bounds.upper)


def oc_update(
    density: DensityField,
    filtered: np.ndarray,
    config: SimpConfig,
    bounds: DensityBounds | None = None,
    target: float | None = None,
    vol_tol: float = VOLUME_TOL,
) -> OcUpdate:
    """Volume-targeted density update via bisection on the multiplier.

    Bisects lambda in [1e-9, 1e9] until the updated field's volume
    fraction is within vol_tol of the target.  If the bounds or move
    limits make the target unreachable, the nearest achievable volume is
    returned with volume_feasible=False.
    """
    x = density.values
    ny, nx = x.shape
    bounds = bounds or DensityBounds.free(DesignDomain(nx, ny), x_min=density.x_min)
    if bounds.lower.shape != x.shape:
        raise ParameterError("bounds shape does not match density field")
    target = config.volfrac if target is None else float(target)

    filt = np.asarray(filtered, dtype=float)
    positive = filt > 0
    n_clamped = int(positive.sum())
    filt = np.where(positive, 0.0, filt)
    if not np.any(filt < 0):
        return OcUpdate(
            density=density,
            lagrange=float("nan"),
            volume=density.volume_fraction,
            clamped_positive=n_clamped,
            degenerate=True,
        )

    def attempt(lam: float) -> tuple[np.ndarray, float]:
        out = oc_step(x, filt, lam, config, bounds)
        return out, float(out.mean())

    x_loose, v_max = attempt(_LAMBDA_LO)
    if abs(v_max - target) <= vol_tol:
        return OcUpdate(DensityField(x_loose, density.x_min), _LAMBDA_LO, v_max, n_clamped)
    x_tight, v_min = attempt(_LAMBDA_HI)
    if abs(v_min - target) <= vol_tol:
        return OcUpdate(DensityField(x_tight, density.x_min), _LAMBDA_HI, v_min, n_clamped)
    if target > v_max:
        return OcUpdate(
            DensityField(x_loose, density.x_min), _LAMBDA_LO, v_max, n_clamped,
            volume_feasible=False,
        )
    if target < v_min:
        return OcUpdate(
            DensityField(x_tight, density.x_min), _LAMBDA_HI, v_min, n_clamped,
            volume_feasible=False,
        )

    lo, hi = _LAMBDA_LO, _LAMBDA_HI
    for _ in range(_MAX_BISECT):
        lam = 0.5 * (lo + hi)
        out, vol = attempt(lam)
        if abs(vol - target) <= vol_tol:
            return OcUpdate(DensityField(out, density.x_min), lam, vol, n_clamped)
        if vol > target:
            lo = lam
        else:
            hi = lam
    raise ConvergenceError(
        f"multiplier bisection exhausted: bracket [{lo:.6e}, {hi:.6e}], "
        f"volume {vol:.6f} vs target {target:.6f}"
    )


def optimize(
    domain: DesignDomain,
    scenario: Scenario,
    config: SimpConfig,
    bounds: DensityBounds | None = None,
) -> OptimizationTrace:
    """Full optimization loop: solve, differentiate, filter, update, repeat.

    Stops when the largest density change drops below change_tol or after
    max_iters updates; the trace records every iteration and a final
    equilibrium solve on the converged field.
    """
    bounds = bounds or DensityBounds.free(domain, x_min=config.x_min)
    target = scenario.volfrac
    fixed_dofs, F = scenario_to_system(scenario, domain)
    if fixed_dofs.size == 0:
        raise OptimizationError("scenario has no fixed nodes", iteration=0, scenario=scenario)
    k0 = element_stiffness(config.young, config.poisson)
    H, Hs = filter_weights(domain.nx, domain.ny, config.rmin)

    x0 = np.full((domain.ny, domain.nx), target)
    x0 = np.minimum(np.maximum(x0, bounds.lower), bounds.upper)
    density = DensityField(x0, x_min=config.x_min)

    trace = OptimizationTrace()

    def solve(dens: DensityField, iteration: int) -> np.ndarray:
        K = assemble_global(domain, dens, config.penal, k0)
        try:
            return solve_equilibrium(
                LinearSystem(K, F, fixed_dofs), method=config.solver
            )
        except SingularSystemError as exc:
            raise OptimizationError(
                f"singular equilibrium solve at iteration {iteration}: {exc}",
                iteration=iteration,
                scenario=scenario,
            ) from exc

    for it in range(1, config.max_iters + 1):
        U = solve(density, it)
        c = compliance(U, F)
        dc = sensitivities(density, U, k0, config.penal, domain)
        dc_f = apply_sensitivity_filter(density, dc, H, Hs)
        update = oc_update(density, dc_f, config, bounds, target=target)
        change = float(np.max(np.abs(update.density.values - density.values)))
        density = update.density
        trace.compliances.append(c)
        trace.volumes.append(update.volume)
        trace.changes.append(change)
        trace.iterations = it
        trace.clamped_positive += update.clamped_positive
        if not update.volume_feasible:
            trace.volume_feasible = False
        if update.degenerate:
            trace.converged = False
            break
        if change < config.change_tol:
            trace.converged = True
            break

    U = solve(density, trace.iterations + 1)
    trace.final_compliance = compliance(U, F)
    trace.final_density = density
    trace.validate(target)
    return trace

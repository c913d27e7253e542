"""Random problem instances and their multi-channel image encoding.

A scenario fixes one structural problem: a contiguous run of encastre
nodes on one edge, one or more unit point loads, a volume-fraction target
field and a bar-count (complexity) bound.  Scenarios encode losslessly to
six node-grid channels (BC_x, BC_y, F_x, F_y, VF, CX); a seventh channel
carries a design resampled onto the node grid.

All channel arrays have shape ``(nx+1, ny+1)`` and are indexed
``[i, j]`` with ``i`` along x and ``j`` along y, matching the node
numbering in :mod:`topoforge.fem`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fem import DesignDomain, ParameterError

SPLITS = ("train", "validation", "test")

# edge id -> (name, opposite)
_EDGES = ("left", "right", "bottom", "top")
_OPPOSITE = {"left": "right", "right": "left", "bottom": "top", "top": "bottom"}


class ScenarioError(ValueError):
    """Scenario inconsistent with its domain or with a requested operation."""


@dataclass(frozen=True)
class Load:
    i: int
    j: int
    theta_deg: float
    mag: float = 1.0

    @property
    def fx(self) -> float:
        return self.mag * math.cos(math.radians(self.theta_deg))

    @property
    def fy(self) -> float:
        return self.mag * math.sin(math.radians(self.theta_deg))


@dataclass(frozen=True, eq=False)
class Scenario:
    """One problem instance; immutable, serializes to a stable JSON object."""

    nx: int
    ny: int
    fixed_nodes: tuple[tuple[int, int], ...]
    loads: tuple[Load, ...]
    volfrac_field: np.ndarray
    complexity: int
    split: str
    seed: int

    def __post_init__(self):
        vf = np.asarray(self.volfrac_field, dtype=float)
        if vf.shape != (self.nx + 1, self.ny + 1):
            raise ScenarioError(
                f"volfrac field shape {vf.shape} does not match node grid "
                f"({self.nx + 1}, {self.ny + 1})"
            )
        if self.split not in SPLITS:
            raise ScenarioError(f"unknown split {self.split!r}")
        if self.complexity < 1:
            raise ScenarioError(f"complexity bound must be >= 1, got {self.complexity}")
        for (i, j) in self.fixed_nodes:
            if not (0 <= i <= self.nx and 0 <= j <= self.ny):
                raise ScenarioError(f"fixed node ({i},{j}) outside node grid")
        for ld in self.loads:
            if not (0 <= ld.i <= self.nx and 0 <= ld.j <= self.ny):
                raise ScenarioError(f"load node ({ld.i},{ld.j}) outside node grid")
        vf = vf.copy()
        vf.flags.writeable = False
        object.__setattr__(self, "volfrac_field", vf)
        object.__setattr__(self, "fixed_nodes", tuple(map(tuple, self.fixed_nodes)))
        object.__setattr__(self, "loads", tuple(self.loads))

    @property
    def domain(self) -> DesignDomain:
        return DesignDomain(self.nx, self.ny)

    @property
    def volfrac(self) -> float:
        """Global volume-fraction target: mean of the node field."""
        return float(self.volfrac_field.mean())

    def with_complexity(self, complexity: int) -> "Scenario":
        return replace(self, complexity=complexity)

    def to_json(self) -> str:
        vf = self.volfrac_field
        payload: dict = {
            "nx": self.nx,
            "ny": self.ny,
            "fixed_nodes": [list(n) for n in self.fixed_nodes],
            "loads": [
                {"i": ld.i, "j": ld.j, "theta_deg": ld.theta_deg, "mag": ld.mag}
                for ld in self.loads
            ],
            "complexity": self.complexity,
            "split": self.split,
            "seed": self.seed,
        }
        if np.all(vf == vf.flat[0]):
            payload["volfrac"] = float(vf.flat[0])
        else:
            payload["volfrac_field"] = vf.tolist()
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        obj = json.loads(text)
        nx, ny = int(obj["nx"]), int(obj["ny"])
        if "volfrac_field" in obj:
            vf = np.asarray(obj["volfrac_field"], dtype=float)
        elif "volfrac" in obj:
            vf = np.full((nx + 1, ny + 1), float(obj["volfrac"]))
        else:
            raise ScenarioError("scenario JSON needs 'volfrac' or 'volfrac_field'")
        return cls(
            nx=nx,
            ny=ny,
            fixed_nodes=tuple((int(i), int(j)) for i, j in obj["fixed_nodes"]),
            loads=tuple(
                Load(int(d["i"]), int(d["j"]), float(d["theta_deg"]), float(d.get("mag", 1.0)))
                for d in obj["loads"]
            ),
            volfrac_field=vf,
            complexity=int(obj["complexity"]),
            split=str(obj["split"]),
            seed=int(obj["seed"]),
        )


@dataclass(frozen=True)
class SamplerParams:
    """Distribution parameters for random scenario generation.

    Raw draws follow Normal(volfrac_mean, volfrac_std) for the volume
    fraction, Poisson(load_rate) for the load count and
    Poisson(fixed_rate) for the fixed-node count; truncation bounds keep
    every instance well posed.
    """

    volfrac_mean: float = 0.3
    volfrac_std: float = 0.05
    volfrac_lo: float = 0.1
    volfrac_hi: float = 0.6
    load_rate: float = 2.0
    fixed_rate: float = 50.0
    fixed_min: int = 2
    magnitude: float = 1.0


def _edge_nodes(domain: DesignDomain, edge: str) -> list[tuple[int, int]]:
    nx, ny = domain.nx, domain.ny
    if edge == "left":
        return [(0, j) for j in range(ny + 1)]
    if edge == "right":
        return [(nx, j) for j in range(ny + 1)]
    if edge == "bottom":
        return [(i, 0) for i in range(nx + 1)]
    if edge == "top":
        return [(i, ny) for i in range(nx + 1)]
    raise ParameterError(f"unknown edge {edge!r}")


def _interior_nodes(domain: DesignDomain) -> list[tuple[int, int]]:
    return [
        (i, j)
        for i in range(1, domain.nx)
        for j in range(1, domain.ny)
    ]


def sample_scenario(
    rng_seed: int,
    split: str,
    domain: DesignDomain,
    params: SamplerParams = SamplerParams(),
) -> Scenario:
    """Draw one scenario; deterministic for a given (seed, split, domain).

    Draw order is fixed: fixed edge, fixed-node count, run start, volume
    fraction, load count, load nodes, load angles.  The volume fraction is
    redrawn until it falls inside [volfrac_lo, volfrac_hi] and the load
    count until it is >= 1 (so both follow the conditional distributions);
    the fixed-node count is clamped into [fixed_min, edge length] because
    rejection sampling of Poisson(50) into a short edge may effectively
    never terminate.
    """
    if split not in SPLITS:
        raise ScenarioError(f"unknown split {split!r}")
    rng = np.random.default_rng(np.random.PCG64(rng_seed))

    edge = _EDGES[int(rng.integers(4))]
    edge_list = _edge_nodes(domain, edge)
    n_fixed = int(np.clip(rng.poisson(params.fixed_rate), params.fixed_min, len(edge_list)))
    start = int(rng.integers(len(edge_list) - n_fixed + 1))
    fixed_nodes = tuple(edge_list[start : start + n_fixed])

    while True:
        volfrac = float(rng.normal(params.volfrac_mean, params.volfrac_std))
        if params.volfrac_lo <= volfrac <= params.volfrac_hi:
            break

    while True:
        n_loads = int(rng.poisson(params.load_rate))
        if n_loads >= 1:
            break

    if split == "test":
        candidates = _interior_nodes(domain)
    else:
        candidates = _edge_nodes(domain, _OPPOSITE[edge])
    n_loads = min(n_loads, len(candidates))
    picks = rng.choice(len(candidates), size=n_loads, replace=False)
    angles = rng.uniform(0.0, 360.0, size=n_loads)
    loads = tuple(
        Load(candidates[k][0], candidates[k][1], float(theta), params.magnitude)
        for k, theta in zip(picks, angles)
    )

    vf_field = np.full((domain.nx + 1, domain.ny + 1), volfrac)
    return Scenario(
        nx=domain.nx,
        ny=domain.ny,
        fixed_nodes=fixed_nodes,
        loads=loads,
        volfrac_field=vf_field,
        complexity=1,
        split=split,
        seed=int(rng_seed),
    )


@dataclass(frozen=True, eq=False)
class ConditionTensor:
    """Node-grid channels encoding a scenario, plus an optional design channel.

    Stacking order is (design?, bc_x, bc_y, f_x, f_y, vf, cx); each channel
    has shape (nx+1, ny+1).
    """

    bc_x: np.ndarray
    bc_y: np.ndarray
    f_x: np.ndarray
    f_y: np.ndarray
    vf: np.ndarray
    cx: np.ndarray
    design: Optional[np.ndarray] = None

    def __post_init__(self):
        shape = np.asarray(self.bc_x).shape
        for name in ("bc_x", "bc_y", "f_x", "f_y", "vf", "cx"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ParameterError(f"channel {name} shape {arr.shape} != {shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.design is not None:
            d = np.asarray(self.design, dtype=float)
            if d.shape != shape:
                raise ParameterError(f"design channel shape {d.shape} != {shape}")
            d.flags.writeable = False
            object.__setattr__(self, "design", d)

    @property
    def n_channels(self) -> int:
        return 7 if self.design is not None else 6

    def stack(self) -> np.ndarray:
        chans = [self.bc_x, self.bc_y, self.f_x, self.f_y, self.vf, self.cx]
        if self.design is not None:
            chans = [self.design] + chans
        return np.stack(chans)


def resample_to_nodes(design: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Bilinearly resample a (ny, nx) element image onto the (nx+1, ny+1) node grid.

    Returned array is indexed [i, j] like all condition channels.
    """
    design = np.asarray(design, dtype=float)
    if design.ndim != 2:
        raise ParameterError(f"design must be 2-D, got shape {design.shape}")
    src_ny, src_nx = design.shape
    # sample positions of node (i, j) in source pixel coordinates
    xi = np.linspace(0.0, src_nx - 1.0, nx + 1)
    yj = np.linspace(0.0, src_ny - 1.0, ny + 1)
    x0 = np.floor(xi).astype(int)
    y0 = np.floor(yj).astype(int)
    x1 = np.minimum(x0 + 1, src_nx - 1)
    y1 = np.minimum(y0 + 1, src_ny - 1)
    tx = xi - x0
    ty = yj - y0
    # out[i, j] interpolates design[row=y, col=x]
    d00 = design[np.ix_(y0, x0)]
    d01 = design[np.ix_(y0, x1)]
    d10 = design[np.ix_(y1, x0)]
    d11 = design[np.ix_(y1, x1)]
    ty_col = ty[:, None]
    interp = (
        d00 * (1 - tx)[None, :] * (1 - ty_col)
        + d01 * tx[None, :] * (1 - ty_col)
        + d10 * (1 - tx)[None, :] * ty_col
        + d11 * tx[None, :] * ty_col
    )
    return interp.T.copy()


def encode_condition_tensor(
    scenario: Scenario,
    design: Optional[np.ndarray] = None,
) -> ConditionTensor:
    """Build the channel encoding of a scenario; adds a design channel if given."""
    nx, ny = scenario.nx, scenario.ny
    shape = (nx + 1, ny + 1)
    bc = np.zeros(shape)
    for (i, j) in scenario.fixed_nodes:
        bc[i, j] = 1.0
    f_x = np.zeros(shape)
    f_y = np.zeros(shape)
    for ld in scenario.loads:
        f_x[ld.i, ld.j] += ld.fx
        f_y[ld.i, ld.j] += ld.fy
    vf = scenario.volfrac_field.copy()
    cx = np.full(shape, float(scenario.complexity))
    design_chan = None
    if design is not None:
        design_chan = resample_to_nodes(design, nx, ny)
    return ConditionTensor(
        bc_x=bc, bc_y=bc.copy(), f_x=f_x, f_y=f_y, vf=vf, cx=cx, design=design_chan
    )


def decode_condition_tensor(
    tensor: ConditionTensor,
    split: str = "train",
    seed: int = 0,
) -> Scenario:
    """Recover a scenario from its channels (angles via atan2 of the force rows)."""
    nx = tensor.bc_x.shape[0] - 1
    ny = tensor.bc_x.shape[1] - 1
    fixed = tuple(
        (int(i), int(j)) for i, j in np.argwhere(tensor.bc_x > 0.5)
    )
    loads = []
    mag_sq = tensor.f_x**2 + tensor.f_y**2
    for i, j in np.argwhere(mag_sq > 1e-24):
        fx = float(tensor.f_x[i, j])
        fy = float(tensor.f_y[i, j])
        theta = math.degrees(math.atan2(fy, fx)) % 360.0
        loads.append(Load(int(i), int(j), theta, math.hypot(fx, fy)))
    return Scenario(
        nx=nx,
        ny=ny,
        fixed_nodes=fixed,
        loads=tuple(loads),
        volfrac_field=tensor.vf.copy(),
        complexity=int(round(float(tensor.cx.flat[0]))),
        split=split,
        seed=seed,
    )


def scenario_to_system(
    scenario: Scenario,
    domain: Optional[DesignDomain] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed DOF indices and global load vector for a scenario.

    Both DOFs of every fixed node are constrained; each load contributes
    (cos theta, sin theta) * magnitude at its node's DOF pair, summed when
    loads collide.
    """
    domain = domain or scenario.domain
    if (domain.nx, domain.ny) != (scenario.nx, scenario.ny):
        raise ScenarioError(
            f"scenario grid {scenario.nx}x{scenario.ny} does not match domain "
            f"{domain.nx}x{domain.ny}"
        )
    fixed_set = set(scenario.fixed_nodes)
    for ld in scenario.loads:
        if (ld.i, ld.j) in fixed_set:
            raise ScenarioError(f"load applied to fixed node ({ld.i},{ld.j})")
    fixed_dofs = np.array(
        sorted(
            dof
            for (i, j) in scenario.fixed_nodes
            for dof in (2 * domain.node_index(i, j), 2 * domain.node_index(i, j) + 1)
        ),
        dtype=int,
    )
    F = np.zeros(domain.n_dofs)
    for ld in scenario.loads:
        n = domain.node_index(ld.i, ld.j)
        F[2 * n] += ld.fx
        F[2 * n + 1] += ld.fy
    return fixed_dofs, F

"""Deterministic design evaluation: binarization, bar counting, reports.

Designs are (ny, nx) grey images in [0, 1] indexed [row=y, col=x].  The
bar counter skeletonizes the binarized design, turns the skeleton into a
graph whose nodes are junction clusters and line endpoints, prunes short
spurs, and reports one bar per node-to-node path.  Bars are typed by
proximity of their endpoints to the scenario's loaded and fixed nodes:
loaded wins over clamped when both apply, everything else is an internal
transmission bar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .fem import (
    DensityField,
    DesignDomain,
    LinearSystem,
    ParameterError,
    assemble_global,
    compliance,
    element_stiffness,
    solve_equilibrium,
)
from .scenarios import Scenario, scenario_to_system

VOLUME_MARGINS = (0.0, 2.5, 5.0, 10.0)
COMPLEXITY_MARGINS = (0, 1, 2)
COMPLIANCE_MARGINS = (2.5, 5.0, 7.5, 10.0)

VOLUME_COLUMNS = ("V_g<=V_i", "<=2.5%", "<=5%", "<=10%")
COMPLEXITY_COLUMNS = ("Cx_g<=Cx_i", "<=+1bar", "<=+2bars")
COMPLIANCE_COLUMNS = ("e%<=2.5", "e%<=5", "e%<=7.5", "e%<=10")

_MARGIN_EPS = 1e-9  # ties pass; guards exact-ratio fixtures against float roundoff

_EIGHT = np.ones((3, 3), dtype=int)


def binarize(design: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Map grey values to {0, 1}; values equal to the threshold become material."""
    if not (0 < threshold < 1):
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    design = np.asarray(design, dtype=float)
    return (design >= threshold).astype(float)


def volume_fraction(design: np.ndarray) -> float:
    """Material ratio: mean of the grey values."""
    return float(np.asarray(design, dtype=float).mean())


def compliance_error(c_true: float, c_pred: float) -> float:
    """Relative percent error |c_true - c_pred| / c_true * 100."""
    if not c_true > 0:
        raise ParameterError(f"true compliance must be positive, got {c_true}")
    return abs(c_true - c_pred) / c_true * 100.0


@dataclass(frozen=True)
class BarGraphParams:
    spur_px: float = 5.0
    junction_radius: float = 2.0
    attach_radius: float = 3.0
    junction_merge_px: float = 5.0  # contract junction-junction paths shorter than this


@dataclass
class Bar:
    polyline: np.ndarray  # (k, 2) of (x, y) points in node-grid units
    length: float
    kind: str  # "clamped" | "loaded" | "internal"


@dataclass
class BarGraph:
    nodes: list[tuple[float, float]]
    bars: list[Bar]
    empty: bool = False

    @property
    def clamped(self) -> int:
        return sum(1 for b in self.bars if b.kind == "clamped")

    @property
    def loaded(self) -> int:
        return sum(1 for b in self.bars if b.kind == "loaded")

    @property
    def internal(self) -> int:
        return sum(1 for b in self.bars if b.kind == "internal")

    @property
    def total(self) -> int:
        return len(self.bars)


class _Edge:
    __slots__ = ("u", "v", "pixels", "length")

    def __init__(self, u: int, v: int, pixels: list[tuple[int, int]], length: float):
        self.u = u
        self.v = v
        self.pixels = pixels
        self.length = length


def _cluster_junctions(junctions: list[tuple[int, int]], radius: float) -> dict:
    """Union junction pixels whose chained pairwise distance is <= radius."""
    parent = list(range(len(junctions)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    by_pos = {p: k for k, p in enumerate(junctions)}
    reach = int(math.ceil(radius))
    for k, (r, c) in enumerate(junctions):
        for dr in range(-reach, reach + 1):
            for dc in range(-reach, reach + 1):
                if dr == 0 and dc == 0:
                    continue
                if math.hypot(dr, dc) > radius:
                    continue
                other = by_pos.get((r + dr, c + dc))
                if other is not None:
                    union(k, other)
    return {p: find(k) for k, p in enumerate(junctions)}


def _trace_graph(skel: np.ndarray, params: BarGraphParams):
    """Skeleton -> (node positions, edges) multigraph."""
    pix = set(map(tuple, np.argwhere(skel)))
    neigh_count = ndimage.convolve(skel.astype(int), _EIGHT, mode="constant") * skel - skel

    def neighbors(p):
        r, c = p
        out = []
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == 0 and dc == 0:
                    continue
                q = (r + dr, c + dc)
                if q in pix:
                    out.append(q)
        return out

    junction_pixels = [p for p in sorted(pix) if neigh_count[p] >= 3]
    endpoint_pixels = [p for p in sorted(pix) if neigh_count[p] == 1]
    cluster_of = _cluster_junctions(junction_pixels, params.junction_radius)

    node_of: dict[tuple[int, int], int] = {}
    node_pos: list[tuple[float, float]] = []
    members: dict[int, list[tuple[int, int]]] = {}
    for p, cl in cluster_of.items():
        if cl not in members:
            members[cl] = []
        members[cl].append(p)
    for cl in sorted(members):
        nid = len(node_pos)
        pts = members[cl]
        node_pos.append(
            (sum(c for _, c in pts) / len(pts) + 0.5, sum(r for r, _ in pts) / len(pts) + 0.5)
        )
        for p in pts:
            node_of[p] = nid
    for p in endpoint_pixels:
        if p in node_of:
            continue
        node_of[p] = len(node_pos)
        node_pos.append((p[1] + 0.5, p[0] + 0.5))

    edges: list[_Edge] = []
    used_steps: set[frozenset] = set()
    used_path: set[tuple[int, int]] = set()

    def step_len(a, b):
        return math.hypot(a[0] - b[0], a[1] - b[1])

    for p in sorted(node_of):
        for q in neighbors(p):
            if q in node_of:
                if node_of[q] == node_of[p]:
                    continue  # internal link of one cluster
                key = frozenset((p, q))
                if key in used_steps:
                    continue
                used_steps.add(key)
                edges.append(_Edge(node_of[p], node_of[q], [p, q], step_len(p, q)))
                continue
            if q in used_path:
                continue
            # walk the degree <= 2 chain starting at q
            chain = [p, q]
            used_path.add(q)
            prev, cur = p, q
            length = step_len(p, q)
            while True:
                # prefer terminating on a node outside the start cluster; a
                # same-cluster hit is only genuine for a real loop
                node_hits = [t for t in neighbors(cur) if t != prev and t in node_of]
                node_hit = None
                for t in node_hits:
                    if node_of[t] != node_of[p]:
                        node_hit = t
                        break
                if node_hit is None and node_hits:
                    node_hit = node_hits[0]
                if node_hit is not None:
                    chain.append(node_hit)
                    length += step_len(cur, node_hit)
                    edges.append(_Edge(node_of[p], node_of[node_hit], chain, length))
                    break
                step = None
                for t in neighbors(cur):
                    if t != prev and t not in used_path:
                        step = t
                        break
                if step is None:
                    # dead end without a registered endpoint; treat cur as a node
                    node_of[cur] = len(node_pos)
                    node_pos.append((cur[1] + 0.5, cur[0] + 0.5))
                    edges.append(_Edge(node_of[p], node_of[cur], chain, length))
                    break
                chain.append(step)
                used_path.add(step)
                length += step_len(cur, step)
                prev, cur = cur, step
    # pure cycles: leftover path pixels not visited and not nodes
    remaining = sorted(pix - used_path - set(node_of))
    remaining = [p for p in remaining if neigh_count[p] == 2]
    rem = set(remaining)
    while rem:
        start = min(rem)
        chain = [start]
        rem.discard(start)
        prev, cur = None, start
        length = 0.0
        while True:
            step = None
            for t in neighbors(cur):
                if t != prev and t in rem:
                    step = t
                    break
            if step is None:
                # close the loop back to start if adjacent
                if prev is not None and start in neighbors(cur) and start != prev:
                    chain.append(start)
                    length += step_len(cur, start)
                break
            chain.append(step)
            rem.discard(step)
            length += step_len(cur, step)
            prev, cur = cur, step
        if len(chain) >= 3:
            nid = len(node_pos)
            node_pos.append((start[1] + 0.5, start[0] + 0.5))
            edges.append(_Edge(nid, nid, chain, length))
    return node_pos, edges


def _degrees(n_nodes: int, edges: list[_Edge]) -> list[int]:
    degree = [0] * n_nodes
    for e in edges:
        degree[e.u] += 1
        degree[e.v] += 1
    return degree


def _prune_and_dissolve(node_pos, edges: list[_Edge], params: BarGraphParams):
    """Clean the raw multigraph into countable bars.

    Three passes: drop short dangling spurs and loop artifacts, contract
    short junction-to-junction paths (a fat fan apex skeletonizes into a
    chain of nearby Y-splits), then merge the two edges of every
    degree-2 node into one through-bar.  Contracted nodes keep the anchor
    positions of everything they absorbed, so bars still type against the
    true junction location.
    """
    anchors: dict[int, list[tuple[float, float]]] = {
        nid: [pos] for nid, pos in enumerate(node_pos)
    }
    degree = _degrees(len(node_pos), edges)
    kept = []
    for e in edges:
        if e.u == e.v and e.length < params.spur_px:
            continue  # junction-zone artifact, not a structural loop
        if e.length < params.spur_px and (degree[e.u] == 1 or degree[e.v] == 1):
            continue
        kept.append(e)

    changed = True
    while changed:
        changed = False
        degree = _degrees(len(node_pos), kept)
        for e in kept:
            if (
                e.u != e.v
                and e.length < params.junction_merge_px
                and degree[e.u] >= 3
                and degree[e.v] >= 3
            ):
                u, v = e.u, e.v
                kept.remove(e)
                for o in kept:
                    if o.u == v:
                        o.u = u
                    if o.v == v:
                        o.v = u
                anchors[u] = anchors[u] + anchors[v]
                kept = [
                    o for o in kept if not (o.u == o.v and o.length < params.spur_px)
                ]
                changed = True
                break

    changed = True
    while changed:
        changed = False
        degree = _degrees(len(node_pos), kept)
        for nid in range(len(node_pos)):
            if degree[nid] != 2:
                continue
            incident = [e for e in kept if nid in (e.u, e.v)]
            if len(incident) != 2:
                continue  # a self-loop at nid; leave the cycle alone
            e1, e2 = incident
            p1 = e1.pixels if e1.v == nid else list(reversed(e1.pixels))
            p2 = e2.pixels if e2.u == nid else list(reversed(e2.pixels))
            u = e1.u if e1.v == nid else e1.v
            v = e2.v if e2.u == nid else e2.u
            merged = _Edge(u, v, p1 + p2[1:], e1.length + e2.length)
            kept.remove(e1)
            kept.remove(e2)
            kept.append(merged)
            changed = True
            break
    return kept, anchors


def extract_bar_graph(
    design: np.ndarray,
    scenario: Scenario,
    params: BarGraphParams = BarGraphParams(),
) -> BarGraph:
    """Decompose a binary design into typed bars.

    The design must be binary (values in {0, 1}); use :func:`binarize`
    first for grey fields.
    """
    design = np.asarray(design, dtype=float)
    if not np.all(np.isin(design, (0.0, 1.0))):
        raise ParameterError("bar extraction expects a binary design; binarize first")
    if design.sum() == 0:
        return BarGraph(nodes=[], bars=[], empty=True)
    skel = skeletonize(design.astype(bool))
    if not skel.any():
        return BarGraph(nodes=[], bars=[], empty=True)

    node_pos, edges = _trace_graph(skel, params)
    edges, anchors = _prune_and_dissolve(node_pos, edges, params)
    if not edges:
        return BarGraph(nodes=[], bars=[], empty=True)

    load_pts = [(ld.i, ld.j) for ld in scenario.loads]
    fixed_pts = [(i, j) for (i, j) in scenario.fixed_nodes]

    def near(pts, targets):
        return any(
            math.hypot(px - tx, py - ty) <= params.attach_radius
            for px, py in pts
            for tx, ty in targets
        )

    bars = []
    used_nodes = set()
    for e in edges:
        pts = np.array([(c + 0.5, r + 0.5) for r, c in e.pixels])
        ends = [tuple(pts[0]), tuple(pts[-1])] + anchors[e.u] + anchors[e.v]
        if near(ends, load_pts):
            kind = "loaded"
        elif near(ends, fixed_pts):
            kind = "clamped"
        else:
            kind = "internal"
        bars.append(Bar(polyline=pts, length=e.length, kind=kind))
        used_nodes.update((e.u, e.v))
    nodes = [node_pos[n] for n in sorted(used_nodes)]
    return BarGraph(nodes=nodes, bars=bars)


@dataclass
class ScreenResult:
    passed: bool
    reasons: list[str] = field(default_factory=list)


def _attachment_ok(binary: np.ndarray, scenario: Scenario, attach_radius: float):
    """Component labels reachable from each load and from the fixed run."""
    labels, n_comp = ndimage.label(binary > 0.5, structure=_EIGHT)
    ny, nx = binary.shape
    rows, cols = np.indices((ny, nx))
    xs = cols + 0.5
    ys = rows + 0.5

    def labels_near(i, j):
        mask = (xs - i) ** 2 + (ys - j) ** 2 <= attach_radius**2
        return set(np.unique(labels[mask & (labels > 0)]))

    load_labels = [labels_near(ld.i, ld.j) for ld in scenario.loads]
    fixed_labels = set()
    for (i, j) in scenario.fixed_nodes:
        fixed_labels |= labels_near(i, j)
    return load_labels, fixed_labels


def truss_likeness(
    design: np.ndarray,
    scenario: Scenario,
    params: BarGraphParams = BarGraphParams(),
    grey_band: tuple[float, float] = (0.2, 0.8),
    grey_limit: float = 0.10,
) -> ScreenResult:
    """Screen a design: connected, mostly binary, and bar-decomposable.

    Passes iff (a) the binarized material forms one component touching all
    load and fixed attachments, (b) fewer than grey_limit of the pixels
    fall strictly inside grey_band, and (c) the bar graph attaches every
    load and the fixed run to at least one bar.
    """
    design = np.clip(np.asarray(design, dtype=float), 0.0, 1.0)
    reasons = []
    binary = binarize(design)

    grey_frac = float(np.mean((design > grey_band[0]) & (design < grey_band[1])))
    if grey_frac >= grey_limit:
        reasons.append("intermediate_density")

    load_labels, fixed_labels = _attachment_ok(binary, scenario, params.attach_radius)
    if any(not s for s in load_labels):
        reasons.append("load_unattached")
    if scenario.fixed_nodes and not fixed_labels:
        reasons.append("support_unattached")
    if not reasons or reasons == ["intermediate_density"]:
        common = fixed_labels if scenario.fixed_nodes else None
        for s in load_labels:
            common = s if common is None else (common & s)
        if common is not None and not common:
            reasons.append("disconnected")

    graph = extract_bar_graph(binary, scenario, params)
    if graph.empty:
        reasons.append("no_bars")
    else:
        # attachment uses whole polylines: members may run through a load
        # or a retracted skeleton end may sit short of it
        pts = np.concatenate([b.polyline for b in graph.bars])

        def bar_near(i, j):
            d2 = (pts[:, 0] - i) ** 2 + (pts[:, 1] - j) ** 2
            return bool(np.any(d2 <= (2.0 * params.attach_radius) ** 2))

        if not all(bar_near(ld.i, ld.j) for ld in scenario.loads):
            reasons.append("load_without_bar")
        if scenario.fixed_nodes and not any(bar_near(i, j) for (i, j) in scenario.fixed_nodes):
            reasons.append("support_without_bar")
    return ScreenResult(passed=not reasons, reasons=reasons)


def design_compliance(
    design: np.ndarray,
    scenario: Scenario,
    x_min: float = 1e-3,
    penal: float = 3.0,
    young: float = 1.0,
    poisson: float = 0.3,
    params: BarGraphParams = BarGraphParams(),
) -> float:
    """Compliance of a binarized design with void elements held at x_min.

    Returns +inf when the material does not connect every load to the
    fixed run (the nominally non-singular void floor would otherwise
    report a huge but meaningless finite value).
    """
    binary = binarize(np.clip(np.asarray(design, dtype=float), 0.0, 1.0))
    load_labels, fixed_labels = _attachment_ok(binary, scenario, params.attach_radius)
    common = fixed_labels
    for s in load_labels:
        common = common & s
    if not common:
        return float("inf")
    domain = scenario.domain
    density = DensityField(np.where(binary > 0.5, 1.0, x_min), x_min=x_min)
    fixed_dofs, F = scenario_to_system(scenario, domain)
    k0 = element_stiffness(young, poisson)
    K = assemble_global(domain, density, penal, k0)
    U = solve_equilibrium(LinearSystem(K, F, fixed_dofs))
    return compliance(U, F)


@dataclass(frozen=True)
class EvaluationSample:
    scenario: Scenario
    design: np.ndarray
    reference: Optional[np.ndarray] = None


@dataclass
class SampleMetrics:
    index: int
    volume: float
    volume_target: float
    bar_total: int
    bar_target: int
    compliance: float
    reference_compliance: Optional[float]
    mse: Optional[float]


@dataclass
class ConstraintReport:
    """Aggregated pass-rates at the standard margin ladders."""

    n_samples: int
    volume_rates: dict[str, float]
    complexity_rates: dict[str, float]
    compliance_rates: dict[str, float]
    n_compliance: int
    mse: Optional[float]
    details: list[SampleMetrics] = field(default_factory=list)

    def __post_init__(self):
        for rates in (self.volume_rates, self.complexity_rates, self.compliance_rates):
            vals = list(rates.values())
            if any(not (0.0 <= v <= 1.0) for v in vals):
                raise ParameterError(f"pass rates must lie in [0, 1]: {rates}")
            if any(b < a - 1e-12 for a, b in zip(vals, vals[1:])):
                raise ParameterError(f"pass rates must not decrease with margin: {rates}")

    def to_summary(self) -> dict:
        return {
            "samples": self.n_samples,
            "complexity": self.complexity_rates,
            "volume": self.volume_rates,
            "compliance": self.compliance_rates,
            "compliance_samples": self.n_compliance,
            "mse": self.mse,
        }

    def csv_rows(self) -> list[tuple[str, str, float]]:
        rows = [("complexity", col, rate) for col, rate in self.complexity_rates.items()]
        rows += [("volume", col, rate) for col, rate in self.volume_rates.items()]
        rows += [("compliance", col, rate) for col, rate in self.compliance_rates.items()]
        return rows


def constraint_report(
    samples: Iterable[EvaluationSample],
    params: BarGraphParams = BarGraphParams(),
    x_min: float = 1e-3,
) -> ConstraintReport:
    """Evaluate candidates against their input constraints and references.

    The volume target is the reference design's material ratio when a
    reference is given (the realized instance of the condition, so that
    self-comparison passes every margin exactly) and the scenario's target
    otherwise.  Compliance error buckets and the reconstruction MSE cover
    the samples that carry a reference design; a candidate whose
    compliance cannot be evaluated (disconnected material) lands in no
    compliance bucket but is never fatal.
    """
    samples = list(samples)
    if not samples:
        raise ParameterError("constraint report needs at least one sample")

    vol_hits = {m: 0 for m in VOLUME_MARGINS}
    cx_hits = {m: 0 for m in COMPLEXITY_MARGINS}
    comp_hits = {m: 0 for m in COMPLIANCE_MARGINS}
    n_comp = 0
    mses = []
    details = []

    for idx, s in enumerate(samples):
        design = np.clip(np.asarray(s.design, dtype=float), 0.0, 1.0)
        binary = binarize(design)
        graph = extract_bar_graph(binary, s.scenario, params)
        cx_g = graph.total
        cx_i = s.scenario.complexity
        for m in COMPLEXITY_MARGINS:
            if cx_g <= cx_i + m:
                cx_hits[m] += 1

        v_g = volume_fraction(design)
        if s.reference is not None:
            v_i = volume_fraction(np.clip(np.asarray(s.reference, dtype=float), 0.0, 1.0))
        else:
            v_i = s.scenario.volfrac
        rel = (v_g - v_i) / v_i * 100.0
        for m in VOLUME_MARGINS:
            if rel <= m + _MARGIN_EPS:
                vol_hits[m] += 1

        c_g = design_compliance(design, s.scenario, x_min=x_min, params=params)
        c_i = None
        mse = None
        if s.reference is not None:
            ref = np.clip(np.asarray(s.reference, dtype=float), 0.0, 1.0)
            if ref.shape != design.shape:
                raise ParameterError(
                    f"sample {idx}: reference shape {ref.shape} != design {design.shape}"
                )
            mse = float(np.mean((design - ref) ** 2))
            mses.append(mse)
            c_i = design_compliance(ref, s.scenario, x_min=x_min, params=params)
            if np.isfinite(c_i) and c_i > 0:
                n_comp += 1
                err = compliance_error(c_i, c_g) if np.isfinite(c_g) else float("inf")
                for m in COMPLIANCE_MARGINS:
                    if err <= m + _MARGIN_EPS:
                        comp_hits[m] += 1
        details.append(
            SampleMetrics(
                index=idx,
                volume=v_g,
                volume_target=v_i,
                bar_total=cx_g,
                bar_target=cx_i,
                compliance=c_g,
                reference_compliance=c_i,
                mse=mse,
            )
        )

    n = len(samples)
    return ConstraintReport(
        n_samples=n,
        volume_rates={
            col: vol_hits[m] / n for col, m in zip(VOLUME_COLUMNS, VOLUME_MARGINS)
        },
        complexity_rates={
            col: cx_hits[m] / n for col, m in zip(COMPLEXITY_COLUMNS, COMPLEXITY_MARGINS)
        },
        compliance_rates={
            col: (comp_hits[m] / n_comp if n_comp else 0.0)
            for col, m in zip(COMPLIANCE_COLUMNS, COMPLIANCE_MARGINS)
        },
        n_compliance=n_comp,
        mse=(float(np.mean(mses)) if mses else None),
        details=details,
    )

"""Command line surface: optimize, dataset, evaluate, bench, count-bars, losses.

Exit codes: 0 success, 2 validation or input errors, 3 singular solves.
All outputs land under paths the caller names; figures are written next
to every delimited report.  TOPOFORGE_THREADS caps dataset parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container, dataset, reporting
from .analysis import (
    BarGraphParams,
    EvaluationSample,
    binarize,
    constraint_report,
    design_compliance,
    extract_bar_graph,
)
from .container import ContainerError
from .dataset import GenerationConfig, GenerationError
from .fem import DesignDomain, ParameterError, SingularSystemError
from .losses import GeneratorBatch, LossWeights, generator_loss
from .scenarios import SamplerParams, Scenario, ScenarioError, sample_scenario
from .simp import DensityBounds, OptimizationError, SimpConfig, optimize

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SINGULAR = 3


@dataclass(frozen=True)
class RunConfig:
    """Validated bundle of optimizer settings plus run-level options."""

    nx: int
    ny: int
    simp: SimpConfig
    seed: int
    split: str
    out: Path
    workers: int
    report_format: str = "csv"

    def __post_init__(self):
        DesignDomain(self.nx, self.ny)
        if self.workers < 1:
            raise ParameterError(f"workers must be >= 1, got {self.workers}")
        if self.report_format not in ("csv", "json"):
            raise ParameterError(f"report format must be csv or json, got {self.report_format}")


def _add_simp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--penal", type=float, default=3.0)
    p.add_argument("--move", type=float, default=0.2)
    p.add_argument("--rmin", type=float, default=1.5)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--change-tol", type=float, default=0.01)
    p.add_argument("--x-min", type=float, default=1e-3)
    p.add_argument("--young", type=float, default=1.0)
    p.add_argument("--poisson", type=float, default=0.3)
    p.add_argument("--solver", choices=("direct", "cg", "auto"), default="direct")


def _simp_from_args(args, volfrac: float) -> SimpConfig:
    return SimpConfig(
        penal=args.penal,
        move=args.move,
        rmin=args.rmin,
        volfrac=volfrac,
        max_iters=args.max_iters,
        change_tol=args.change_tol,
        x_min=args.x_min,
        young=args.young,
        poisson=args.poisson,
        solver=args.solver,
    )


def _worker_cap(requested: int) -> int:
    cap = os.environ.get("TOPOFORGE_THREADS")
    if cap:
        return max(1, min(requested, int(cap)))
    return requested


def _parse_disk(spec: str) -> tuple[float, float, float]:
    try:
        cx, cy, r = (float(v) for v in spec.split(","))
    except ValueError as exc:
        raise ParameterError(f"disk must be 'cx,cy,r', got {spec!r}") from exc
    return cx, cy, r


def cmd_optimize(args) -> int:
    scenario = Scenario.from_json(Path(args.scenario).read_text())
    if args.nx is not None and args.nx != scenario.nx or args.ny is not None and args.ny != scenario.ny:
        raise ParameterError(
            f"--nx/--ny ({args.nx}x{args.ny}) conflict with the scenario grid "
            f"({scenario.nx}x{scenario.ny})"
        )
    if args.volfrac is not None:
        field = np.full((scenario.nx + 1, scenario.ny + 1), args.volfrac)
        scenario = Scenario(
            nx=scenario.nx,
            ny=scenario.ny,
            fixed_nodes=scenario.fixed_nodes,
            loads=scenario.loads,
            volfrac_field=field,
            complexity=scenario.complexity,
            split=scenario.split,
            seed=scenario.seed,
        )
    domain = scenario.domain
    config = _simp_from_args(args, volfrac=scenario.volfrac)
    bounds = DensityBounds.free(domain, x_min=config.x_min)
    if args.passive_disk:
        bounds = bounds.with_passive_disk(*_parse_disk(args.passive_disk))
    if args.active_disk:
        bounds = bounds.with_active_disk(*_parse_disk(args.active_disk))

    trace = optimize(domain, scenario, config, bounds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    design = trace.final_density.values
    container.write_design(out, design)
    base = out.with_suffix("")
    reporting.save_trace_csv(trace, f"{base}.trace.csv")
    reporting.save_design_image(design, f"{base}.png")
    reporting.save_convergence_plot(trace, f"{base}.convergence.png")
    print(
        f"optimize: {trace.iterations} iterations, converged={trace.converged}, "
        f"compliance={trace.final_compliance:.6g} J, "
        f"volume={trace.final_density.volume_fraction:.4f}"
    )
    return EXIT_OK


def cmd_dataset(args) -> int:
    run = RunConfig(
        nx=args.nx,
        ny=args.ny,
        simp=_simp_from_args(args, volfrac=0.3),
        seed=args.seed,
        split=args.split,
        out=Path(args.out),
        workers=_worker_cap(args.workers),
    )
    config = GenerationConfig(
        nx=run.nx,
        ny=run.ny,
        simp=run.simp,
        sampler=SamplerParams(),
        bar_params=BarGraphParams(),
        shard_size=args.shard_size,
        screen=not args.no_screen,
    )
    manifest = dataset.generate_split(
        run.split, args.n, run.seed, run.workers, config, run.out
    )
    manifests = [manifest]
    for other in Path(args.out).glob("*-manifest.json"):
        if other != manifest.path:
            manifests.append(dataset.load_manifest(other))
    dataset.verify_no_seed_reuse(manifests)
    if not args.no_report:
        summary = dataset.distribution_summary(manifest, n_reference=args.report_draws)
        out = Path(args.out)
        reporting.save_dataset_report(
            summary,
            out / f"{args.split}-report.csv",
            out / f"{args.split}-distributions.png",
        )
    print(
        f"dataset: {manifest.record_count} records in {len(manifest.data['shards'])} shards, "
        f"rejected {manifest.data['acceptance']['rejected']} "
        f"(rate {manifest.data['acceptance']['rate']:.3f})"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = dataset.load_manifest(args.manifest)
    cand_dir = Path(args.candidates)
    if not cand_dir.is_dir():
        raise ParameterError(f"candidate directory {cand_dir} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    unpaired = []
    for idx in range(manifest.record_count):
        record = dataset.read_record(manifest, idx)
        cand_path = cand_dir / f"{idx:06d}.tpfg"
        if not cand_path.exists():
            unpaired.append(idx)
            continue
        samples.append(
            EvaluationSample(
                scenario=record.scenario,
                design=container.read_design(cand_path),
                reference=record.design,
            )
        )
    if not samples:
        raise ParameterError(f"no candidate design pairs found in {cand_dir}")
    report = constraint_report(samples)
    reporting.save_constraint_report(
        report, out / "report.csv", out / "report.json", unpaired=unpaired
    )
    reporting.save_report_distributions(report, out / "distributions.png")
    print(f"evaluate: {report.n_samples} pairs, {len(unpaired)} unpaired")
    for metric, margin, rate in report.csv_rows():
        print(f"  {metric:>10} {margin:>12}: {100 * rate:6.2f}%")
    print(f"  mse: {report.mse}")
    return EXIT_OK


def cmd_bench(args) -> int:
    n_list = [int(v) for v in args.n_list.split(",")]
    if any(n < 1 for n in n_list):
        raise ParameterError(f"batch sizes must be >= 1: {n_list}")
    domain = DesignDomain(args.nx, args.ny)
    scenario = sample_scenario(args.seed, "train", domain)
    config = SimpConfig(volfrac=scenario.volfrac, max_iters=args.max_iters)
    trace = optimize(domain, scenario, config)
    design = trace.final_density.values
    rows = []
    for n in n_list:
        t0 = time.perf_counter()
        for _ in range(n):
            design_compliance(design, scenario)
        total = time.perf_counter() - t0
        rows.append({"n": n, "total_s": total, "per_design_s": total / n})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reporting.save_bench_report(rows, out / "bench.csv", out / "bench.png")
    for row in rows:
        print(f"bench: n={row['n']:>6} total={row['total_s']:.4f}s per-design={row['per_design_s']:.4f}s")
    return EXIT_OK


def cmd_count_bars(args) -> int:
    try:
        design = container.read_design(args.design)
    except (OSError, ContainerError) as exc:
        raise ParameterError(f"cannot read design {args.design}: {exc}") from exc
    try:
        scenario = Scenario.from_json(Path(args.scenario).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read scenario {args.scenario}: {exc}") from exc
    graph = extract_bar_graph(binarize(design, args.threshold), scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reporting.save_bars_json(graph, out / "bars.json")
    reporting.save_bar_overlay(design, graph, out / "bars.png")
    print(
        f"count-bars: total={graph.total} clamped={graph.clamped} "
        f"loaded={graph.loaded} internal={graph.internal}"
    )
    return EXIT_OK


def cmd_losses(args) -> int:
    try:
        payload = json.loads(Path(args.batch).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read batch file {args.batch}: {exc}") from exc
    batch = GeneratorBatch(
        true_designs=np.asarray(payload["true_designs"], dtype=float),
        pred_designs=np.asarray(payload["pred_designs"], dtype=float),
        disc_probs=np.asarray(payload["disc_probs"], dtype=float),
        true_counts=np.asarray(payload["true_counts"], dtype=float),
        pred_counts=np.asarray(payload["pred_counts"], dtype=float),
        counter_accuracy=float(payload["counter_accuracy"]),
    )
    weights = LossWeights(args.l1, args.l2, args.l3)
    breakdown = generator_loss(batch, weights, strict_counting=args.strict_counting)
    result = {
        "total": breakdown.total,
        "reconstruction": breakdown.reconstruction,
        "adversarial": breakdown.adversarial,
        "counting": breakdown.counting,
        "terms": {
            "reconstruction": breakdown.reconstruction_term,
            "adversarial": breakdown.adversarial_term,
            "counting": breakdown.counting_term,
        },
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "losses.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topoforge",
        description="Topology-optimization engine, design analyzer and dataset factory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run one optimization and write the design")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--ny", type=int, default=None)
    p.add_argument("--volfrac", type=float, default=None, help="override the scenario's target")
    p.add_argument("--passive-disk", default=None, metavar="CX,CY,R")
    p.add_argument("--active-disk", default=None, metavar="CX,CY,R")
    _add_simp_flags(p)
    p.add_argument("--out", required=True, help="output design file (.tpfg)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("dataset", help="generate a labeled split of design records")
    p.add_argument("--split", choices=("train", "validation", "test"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--nx", type=int, default=100)
    p.add_argument("--ny", type=int, default=100)
    p.add_argument("--shard-size", type=int, default=256)
    p.add_argument("--no-screen", action="store_true")
    p.add_argument("--no-report", action="store_true")
    p.add_argument("--report-draws", type=int, default=10_000)
    _add_simp_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("evaluate", help="score candidate designs against a dataset")
    p.add_argument("--candidates", required=True, help="directory of NNNNNN.tpfg designs")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="time finite-element compliance evaluation")
    p.add_argument("--n-list", default="1,10,100")
    p.add_argument("--nx", type=int, default=100)
    p.add_argument("--ny", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("count-bars", help="count typed bars in a design")
    p.add_argument("--design", required=True, help="design file (.tpfg)")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_count_bars)

    p = sub.add_parser("losses", help="evaluate generator/discriminator losses on a batch")
    p.add_argument("--batch", required=True, help="batch JSON file")
    p.add_argument("--l1", type=float, default=1.0)
    p.add_argument("--l2", type=float, default=0.01)
    p.add_argument("--l3", type=float, default=0.1)
    p.add_argument("--strict-counting", action="store_true")
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(func=cmd_losses)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OptimizationError,) as exc:
        if "singular" in str(exc).lower():
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SINGULAR
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SingularSystemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR
    except (
        ParameterError,
        ScenarioError,
        GenerationError,
        ContainerError,
        FileNotFoundError,
        json.JSONDecodeError,
        KeyError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Batch generation of labeled design records into binary shards.

A run walks seeds upward from ``base_seed``: sample a scenario, optimize
it, screen the result, back-fill the bar-count label, and persist the
record.  Rejected seeds (non-converged or non-truss-like) are logged in
the manifest.  Results are consumed strictly in seed order, so the output
bytes depend only on (split, n, base_seed, config), never on the worker
count; shards commit atomically and a progress file makes interrupted
runs resumable with identical final output.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import container
from .analysis import BarGraphParams, binarize, extract_bar_graph, truss_likeness, volume_fraction
from .fem import DesignDomain
from .scenarios import SamplerParams, Scenario, encode_condition_tensor, sample_scenario
from .simp import OptimizationError, SimpConfig, optimize

MANIFEST_VERSION = 1


class GenerationError(RuntimeError):
    """Dataset generation could not finish."""


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class GenerationConfig:
    """Everything that determines the bytes of a generated split.

    The per-record volume target always comes from the sampled scenario;
    simp.volfrac is only a placeholder default.
    """

    nx: int = 100
    ny: int = 100
    simp: SimpConfig = field(default_factory=lambda: SimpConfig(volfrac=0.3))
    sampler: SamplerParams = field(default_factory=SamplerParams)
    bar_params: BarGraphParams = field(default_factory=BarGraphParams)
    shard_size: int = 256
    screen: bool = True
    screen_grey_limit: float = 0.10
    max_attempts_per_record: int = 500

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self, split: str, n: int, base_seed: int) -> str:
        payload = {
            "split": split,
            "n": n,
            "base_seed": base_seed,
            "config": self.to_dict(),
            "channels": list(container.RECORD_CHANNELS),
            "format_version": container.FORMAT_VERSION,
        }
        return hashlib.sha256(_canonical_json(payload).encode()).hexdigest()


@dataclass
class RecordResult:
    seed: int
    accepted: bool
    reason: str = ""
    scenario_json: str = ""
    labels: dict = field(default_factory=dict)
    planes: Optional[dict] = None


@dataclass(frozen=True)
class SampleRecord:
    index: int
    seed: int
    scenario: Scenario
    labels: dict
    channels: dict
    checksum: str

    @property
    def design(self) -> np.ndarray:
        return self.channels["design"].astype(float)


@dataclass
class ShardManifest:
    path: Path
    data: dict

    @property
    def split(self) -> str:
        return self.data["split"]

    @property
    def record_count(self) -> int:
        return int(self.data["record_count"])

    @property
    def seed_range(self) -> tuple[int, int]:
        lo, hi = self.data["seed_range"]
        return int(lo), int(hi)

    @property
    def directory(self) -> Path:
        return self.path.parent

    def shard_for(self, index: int) -> tuple[dict, int]:
        if not (0 <= index < self.record_count):
            raise IndexError(
                f"record index {index} out of range (record count {self.record_count})"
            )
        for shard in self.data["shards"]:
            offset = int(shard["index_offset"])
            if offset <= index < offset + int(shard["records"]):
                return shard, index - offset
        raise GenerationError(f"manifest {self.path} has no shard covering index {index}")


def produce_record(seed: int, split: str, config: GenerationConfig) -> RecordResult:
    """Sample, optimize, screen and label one seed; pure function of its inputs."""
    domain = DesignDomain(config.nx, config.ny)
    scenario = sample_scenario(seed, split, domain, config.sampler)
    try:
        trace = optimize(domain, scenario, config.simp)
    except OptimizationError as exc:
        return RecordResult(seed=seed, accepted=False, reason=f"singular:{exc.iteration}")
    if not trace.converged:
        return RecordResult(seed=seed, accepted=False, reason="non_converged")
    design64 = trace.final_density.values
    if config.screen:
        screen = truss_likeness(
            design64, scenario, config.bar_params, grey_limit=config.screen_grey_limit
        )
        if not screen.passed:
            return RecordResult(
                seed=seed, accepted=False, reason="not_truss_like:" + ",".join(screen.reasons)
            )
    # labels are derived from the float32 design actually persisted, so a
    # reader recomputes them bit-for-bit; the compliance label keeps full
    # precision from the final equilibrium solve
    design = design64.astype(np.float32).astype(float)
    graph = extract_bar_graph(binarize(design), scenario, config.bar_params)
    if graph.total < 1:
        return RecordResult(seed=seed, accepted=False, reason="no_bars")
    scenario = scenario.with_complexity(graph.total)
    tensor = encode_condition_tensor(scenario)
    planes = {
        "design": design,
        "bc_x": tensor.bc_x,
        "bc_y": tensor.bc_y,
        "f_x": tensor.f_x,
        "f_y": tensor.f_y,
        "vf": tensor.vf,
        "cx": tensor.cx,
    }
    labels = {
        "compliance": float(trace.final_compliance),
        "volume_fraction": volume_fraction(design),
        "bars_clamped": graph.clamped,
        "bars_loaded": graph.loaded,
        "bars_internal": graph.internal,
        "bars_total": graph.total,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "truss_like": True,
        "provenance": "simp",
    }
    return RecordResult(
        seed=seed,
        accepted=True,
        scenario_json=scenario.to_json(),
        labels=labels,
        planes=planes,
    )


def _result_stream(
    next_seed: int,
    split: str,
    config: GenerationConfig,
    workers: int,
    max_seed: int,
) -> Iterator[RecordResult]:
    seeds = iter(range(next_seed, max_seed))
    if workers <= 1:
        for seed in seeds:
            yield produce_record(seed, split, config)
        return
    block = workers * 4
    with ProcessPoolExecutor(max_workers=workers) as pool:
        while True:
            chunk = []
            for _ in range(block):
                try:
                    chunk.append(next(seeds))
                except StopIteration:
                    break
            if not chunk:
                return
            yield from pool.map(produce_record, chunk, [split] * len(chunk), [config] * len(chunk))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _shard_name(split: str, k: int) -> str:
    return f"{split}-{k:05d}.tpfg"


def _commit_shard(
    out_dir: Path,
    split: str,
    shard_idx: int,
    index_offset: int,
    buffered: list[RecordResult],
    config: GenerationConfig,
) -> dict:
    shard_file = _shard_name(split, shard_idx)
    checksums = container.write_container(
        out_dir / shard_file,
        config.nx,
        config.ny,
        [r.planes for r in buffered],
    )
    meta = {
        "shard": shard_idx,
        "records": [
            {
                "index": index_offset + k,
                "seed": r.seed,
                "checksum": checksums[k],
                "scenario": json.loads(r.scenario_json),
                "labels": r.labels,
            }
            for k, r in enumerate(buffered)
        ],
    }
    meta_file = f"{split}-{shard_idx:05d}.meta.json"
    _atomic_write_text(out_dir / meta_file, _canonical_json(meta))
    return {
        "file": shard_file,
        "meta": meta_file,
        "records": len(buffered),
        "index_offset": index_offset,
    }


def generate_split(
    split: str,
    n: int,
    base_seed: int,
    workers: int,
    config: GenerationConfig,
    out_dir: str | os.PathLike,
) -> ShardManifest:
    """Generate n accepted records; deterministic and resumable.

    Re-invoking with identical arguments after an interruption continues
    from the last committed shard and produces byte-identical output; an
    already complete run returns its manifest untouched.
    """
    if n < 1:
        raise GenerationError(f"need n >= 1 records, got {n}")
    if workers < 1:
        raise GenerationError(f"need workers >= 1, got {workers}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config.fingerprint(split, n, base_seed)
    manifest_path = out_dir / f"{split}-manifest.json"
    progress_path = out_dir / f"{split}-progress.json"

    if manifest_path.exists():
        manifest = load_manifest(manifest_path)
        if manifest.data["config_fingerprint"] != fingerprint:
            raise GenerationError(
                f"{manifest_path} exists with a different configuration; "
                "use a fresh output directory"
            )
        return manifest

    shards: list[dict] = []
    rejected: list[dict] = []
    accepted = 0
    next_seed = base_seed
    if progress_path.exists():
        progress = json.loads(progress_path.read_text())
        if progress["config_fingerprint"] != fingerprint:
            raise GenerationError(
                f"{progress_path} belongs to a different configuration; "
                "use a fresh output directory"
            )
        shards = progress["shards"]
        rejected = progress["rejected"]
        accepted = int(progress["accepted"])
        next_seed = int(progress["next_seed"])
        for shard in shards:
            if not (out_dir / shard["file"]).exists():
                raise GenerationError(f"progress lists missing shard {shard['file']}")

    buffered: list[RecordResult] = []
    max_seed = base_seed + config.max_attempts_per_record * n + 1000
    last_consumed = next_seed - 1

    def flush(final: bool) -> None:
        nonlocal buffered
        if not buffered:
            return
        if not final and len(buffered) < config.shard_size:
            return
        shard = _commit_shard(out_dir, split, len(shards), accepted - len(buffered), buffered, config)
        shards.append(shard)
        buffered = []
        _atomic_write_text(
            progress_path,
            _canonical_json(
                {
                    "config_fingerprint": fingerprint,
                    "next_seed": last_consumed + 1,
                    "accepted": accepted,
                    "rejected": rejected,
                    "shards": shards,
                }
            ),
        )

    if accepted < n:
        for result in _result_stream(next_seed, split, config, workers, max_seed):
            last_consumed = result.seed
            if result.accepted:
                buffered.append(result)
                accepted += 1
                flush(final=False)
                if accepted >= n:
                    break
            else:
                rejected.append({"seed": result.seed, "reason": result.reason})
        if accepted < n:
            raise GenerationError(
                f"exhausted {max_seed - base_seed} seeds with only {accepted}/{n} accepted "
                f"records (rejected {len(rejected)})"
            )
        flush(final=True)

    n_rejected = len(rejected)
    manifest_data = {
        "format_version": MANIFEST_VERSION,
        "split": split,
        "nx": config.nx,
        "ny": config.ny,
        "channels": list(container.RECORD_CHANNELS),
        "record_count": accepted,
        "base_seed": base_seed,
        "seed_range": [base_seed, last_consumed],
        "config_fingerprint": fingerprint,
        "config": config.to_dict(),
        "shards": shards,
        "rejected": rejected,
        "acceptance": {
            "accepted": accepted,
            "rejected": n_rejected,
            "rate": accepted / (accepted + n_rejected) if accepted + n_rejected else 0.0,
        },
    }
    _atomic_write_text(manifest_path, _canonical_json(manifest_data))
    if progress_path.exists():
        progress_path.unlink()
    return ShardManifest(path=manifest_path, data=manifest_data)


def load_manifest(path: str | os.PathLike) -> ShardManifest:
    path = Path(path)
    data = json.loads(path.read_text())
    if data.get("format_version") != MANIFEST_VERSION:
        raise GenerationError(f"{path}: unsupported manifest version")
    return ShardManifest(path=path, data=data)


def read_record(manifest: ShardManifest, index: int) -> SampleRecord:
    """Checksum-verified record by global index."""
    shard, local = manifest.shard_for(index)
    meta = json.loads((manifest.directory / shard["meta"]).read_text())
    entry = meta["records"][local]
    planes = container.read_record_planes(
        manifest.directory / shard["file"], local, expected_checksum=entry["checksum"]
    )
    return SampleRecord(
        index=index,
        seed=int(entry["seed"]),
        scenario=Scenario.from_json(_canonical_json(entry["scenario"])),
        labels=entry["labels"],
        channels=planes,
        checksum=entry["checksum"],
    )


def iter_records(manifest: ShardManifest) -> Iterator[SampleRecord]:
    for i in range(manifest.record_count):
        yield read_record(manifest, i)


def verify_no_seed_reuse(manifests: list[ShardManifest]) -> None:
    """Reject overlapping seed ranges between splits."""
    ranges = sorted((m.seed_range, m.split) for m in manifests)
    for ((lo1, hi1), s1), ((lo2, hi2), s2) in zip(ranges, ranges[1:]):
        if lo2 <= hi1:
            raise GenerationError(
                f"seed ranges overlap between splits {s1} ([{lo1}, {hi1}]) "
                f"and {s2} ([{lo2}, {hi2}])"
            )


def distribution_summary(
    manifest: ShardManifest,
    n_reference: int = 10_000,
    reference_seed_offset: int = 1 << 40,
) -> dict:
    """Accepted-record statistics against fresh sampler draws.

    Reports the two-sided Kolmogorov-Smirnov statistic of the accepted
    volume fractions against n_reference fresh draws, plus empirical
    complexity and volume histograms for distribution plots.
    """
    from scipy import stats

    config = GenerationConfig(**_config_from_dict(manifest.data["config"]))
    domain = DesignDomain(config.nx, config.ny)
    volfracs = []
    complexities = []
    for i in range(manifest.record_count):
        record = read_record(manifest, i)
        volfracs.append(record.scenario.volfrac)
        complexities.append(record.scenario.complexity)
    base = manifest.data["base_seed"] + reference_seed_offset
    reference = [
        sample_scenario(base + k, manifest.split, domain, config.sampler).volfrac
        for k in range(n_reference)
    ]
    ks = stats.ks_2samp(volfracs, reference)
    counts, edges = np.histogram(complexities, bins=range(1, max(complexities) + 3))
    return {
        "volfrac_ks_statistic": float(ks.statistic),
        "volfrac_mean": float(np.mean(volfracs)),
        "volfrac_reference_mean": float(np.mean(reference)),
        "volfracs": volfracs,
        "reference_volfracs": reference,
        "complexities": complexities,
        "complexity_histogram": {
            "bin_edges": [int(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
        "acceptance": manifest.data["acceptance"],
    }


def _config_from_dict(d: dict) -> dict:
    return {
        "nx": d["nx"],
        "ny": d["ny"],
        "simp": SimpConfig(**d["simp"]),
        "sampler": SamplerParams(**d["sampler"]),
        "bar_params": BarGraphParams(**d["bar_params"]),
        "shard_size": d["shard_size"],
        "screen": d["screen"],
        "screen_grey_limit": d["screen_grey_limit"],
        "max_attempts_per_record": d["max_attempts_per_record"],
    }

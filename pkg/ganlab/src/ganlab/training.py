"""Training procedures: counter pretraining, adversarial loop, inference.

The generator consumes the six condition channels and is scored by three
terms: pixel reconstruction against the stored design, the adversarial
log(1 - D(fake)) with a seven-channel discriminator, and the bar-count
indicator gated by the counter's accuracy on real designs.  Zero-weighted
terms are skipped outright, so a run with only the reconstruction weight
is bit-identical to a plain autoencoder loop.

The printed counting indicator is piecewise constant, hence gradient-free
almost everywhere; it is logged and added at its face value.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import shards
from .models import (
    CounterSpec,
    GeneratorSpec,
    build_counter,
    build_discriminator,
    build_generator,
)

LOG_EPS = 1e-7


class DataError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    nf: int = 16
    counter_nf: int = 16
    lr_generator: float = 2e-3
    lr_discriminator: float = 1e-3
    lr_counter: float = 2e-3
    batch_size: int = 8
    seed: int = 0
    w_reconstruction: float = 1.0
    w_adversarial: float = 0.01
    w_counting: float = 0.1
    counter_frozen: bool = True
    strict_counting: bool = False

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainingConfig":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "TrainingConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class TrainState:
    config: TrainingConfig
    generator: nn.Module
    discriminator: nn.Module
    counter: nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    opt_c: torch.optim.Optimizer
    step: int = 0
    counter_accuracy: float = 0.0
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "config": dataclasses.asdict(self.config),
                "generator": self.generator.state_dict(),
                "discriminator": self.discriminator.state_dict(),
                "counter": self.counter.state_dict(),
                "opt_g": self.opt_g.state_dict(),
                "opt_d": self.opt_d.state_dict(),
                "opt_c": self.opt_c.state_dict(),
                "step": self.step,
                "counter_accuracy": self.counter_accuracy,
                "history": self.history,
            },
            path,
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrainState":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        state = new_state(TrainingConfig(**payload["config"]))
        state.generator.load_state_dict(payload["generator"])
        state.discriminator.load_state_dict(payload["discriminator"])
        state.counter.load_state_dict(payload["counter"])
        state.opt_g.load_state_dict(payload["opt_g"])
        state.opt_d.load_state_dict(payload["opt_d"])
        state.opt_c.load_state_dict(payload["opt_c"])
        state.step = payload["step"]
        state.counter_accuracy = payload["counter_accuracy"]
        state.history = payload["history"]
        return state


def new_state(config: TrainingConfig) -> TrainState:
    torch.manual_seed(config.seed)
    generator = build_generator(GeneratorSpec(nf=config.nf))
    torch.manual_seed(config.seed + 1)
    discriminator = build_discriminator(nf=config.nf)
    torch.manual_seed(config.seed + 2)
    counter = build_counter(CounterSpec(nf=config.counter_nf))
    return TrainState(
        config=config,
        generator=generator,
        discriminator=discriminator,
        counter=counter,
        opt_g=torch.optim.Adam(generator.parameters(), lr=config.lr_generator),
        opt_d=torch.optim.Adam(discriminator.parameters(), lr=config.lr_discriminator),
        opt_c=torch.optim.Adam(counter.parameters(), lr=config.lr_counter),
    )


CX_SCALE = 10.0  # bar-count plane divisor; raw counts saturate float32 activations


@dataclass
class Dataset:
    """Tensorized records in image layout (rows along y, columns along x).

    The bar-count plane is divided by CX_SCALE on load; the on-disk format
    keeps raw counts.
    """

    conditions: torch.Tensor  # (N, 6, H, W): bc_x, bc_y, f_x, f_y, vf, cx/CX_SCALE
    designs: torch.Tensor  # (N, 1, H, W) node-grid designs
    counts: torch.Tensor  # (N,) true bar counts
    nx: int
    ny: int

    def __len__(self) -> int:
        return self.designs.shape[0]


def _to_image(plane: np.ndarray) -> torch.Tensor:
    # node planes are stored (nx+1, ny+1) indexed [i, j]; image layout is [row=j, col=i]
    return torch.from_numpy(plane.T.copy()).float()


def load_training_data(manifest_path: str | Path) -> Dataset:
    nx, ny, planes, labels = shards.load_dataset(manifest_path)
    if not planes:
        raise DataError(f"{manifest_path}: no records")
    conditions = []
    designs = []
    counts = []
    for record, label in zip(planes, labels):
        cond = torch.stack(
            [_to_image(record[name]) for name in ("bc_x", "bc_y", "f_x", "f_y", "vf")]
            + [_to_image(record["cx"]) / CX_SCALE]
        )
        design = torch.from_numpy(record["design"].copy()).float()
        design = torch.nn.functional.interpolate(
            design[None, None], size=(ny + 1, nx + 1), mode="bilinear", align_corners=True
        )[0]
        conditions.append(cond)
        designs.append(design)
        counts.append(float(label["bars_total"]))
    return Dataset(
        conditions=torch.stack(conditions),
        designs=torch.stack(designs),
        counts=torch.tensor(counts),
        nx=nx,
        ny=ny,
    )


def _check_finite(values: dict[str, float], state: TrainState, checkpoint: str | Path | None):
    if all(np.isfinite(v) for v in values.values()):
        return
    if checkpoint is not None:
        state.save(checkpoint)
    bad = {k: v for k, v in values.items() if not np.isfinite(v)}
    raise DivergenceError(f"non-finite losses at step {state.step}: {bad}")


def _batches(n: int, batch_size: int, steps: int, seed: int):
    """Yields index tensors; full-dataset batches consume no randomness."""
    if batch_size >= n:
        idx = torch.arange(n)
        for _ in range(steps):
            yield idx
        return
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        yield torch.randperm(n, generator=gen)[:batch_size]


def pretrain_counter(
    manifest_path: str | Path,
    epochs: int,
    config: TrainingConfig,
    state: TrainState | None = None,
) -> TrainState:
    """Regress true bar counts; the held-out error must beat the untrained model."""
    data = load_training_data(manifest_path)
    state = state or new_state(config)
    n = len(data)
    n_hold = max(1, n // 4)
    hold = slice(n - n_hold, n)
    train = slice(0, n - n_hold)
    if train.stop <= 0:
        raise DataError("not enough records to split off a held-out slice")

    counter_in = torch.cat([data.designs, data.conditions[:, :5]], dim=1)
    targets = data.counts

    def holdout_mae() -> float:
        state.counter.eval()
        with torch.no_grad():
            pred = state.counter(counter_in[hold])
        return float((pred - targets[hold]).abs().mean())

    initial_mae = holdout_mae()
    baseline_zero_mae = float(targets[hold].abs().mean())
    gen = torch.Generator().manual_seed(config.seed + 17)
    state.counter.train()
    n_train = train.stop
    for epoch in range(epochs):
        order = torch.randperm(n_train, generator=gen)
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            state.opt_c.zero_grad()
            pred = state.counter(counter_in[idx])
            loss = torch.mean((pred - targets[idx]) ** 2)
            loss.backward()
            state.opt_c.step()
            _check_finite({"counter_mse": float(loss.detach())}, state, None)
    final_mae = holdout_mae()
    state.counter.eval()
    with torch.no_grad():
        train_pred = state.counter(counter_in[train])
    acc = float((torch.round(train_pred) == targets[train]).float().mean())
    state.counter_accuracy = acc
    state.history.append(
        {
            "phase": "counter_pretrain",
            "epochs": epochs,
            "initial_holdout_mae": initial_mae,
            "final_holdout_mae": final_mae,
            "baseline_zero_mae": baseline_zero_mae,
            "counter_accuracy": acc,
        }
    )
    if not final_mae < initial_mae:
        raise DivergenceError(
            f"counter pretraining failed to improve: {initial_mae:.4f} -> {final_mae:.4f}"
        )
    return state


def _clamped_log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(torch.clamp(x, LOG_EPS, 1.0 - LOG_EPS))


def train_gan(
    manifest_path: str | Path,
    state: TrainState,
    steps: int,
    checkpoint: str | Path | None = None,
) -> TrainState:
    """Alternating discriminator/generator updates on the composite loss."""
    config = state.config
    data = load_training_data(manifest_path)
    n = len(data)
    use_adv = config.w_adversarial > 0.0
    use_cnt = config.w_counting > 0.0
    if config.counter_frozen:
        state.counter.eval()
    state.generator.train()
    state.discriminator.train()

    for idx in _batches(n, config.batch_size, steps, config.seed + 31):
        cond = data.conditions[idx]
        real = data.designs[idx]
        losses: dict[str, float] = {}

        if use_adv:
            with torch.no_grad():
                fake = state.generator(cond)
            state.opt_d.zero_grad()
            d_real = state.discriminator(torch.cat([real, cond], dim=1))
            d_fake = state.discriminator(torch.cat([fake, cond], dim=1))
            d_loss = -(_clamped_log(d_real).mean() + _clamped_log(1.0 - d_fake).mean())
            d_loss.backward()
            state.opt_d.step()
            losses["d_loss"] = float(d_loss.detach())

        state.opt_g.zero_grad()
        fake = state.generator(cond)
        g_total = torch.zeros(())
        if config.w_reconstruction > 0.0:
            rec = torch.mean((fake - real) ** 2)
            g_total = g_total + config.w_reconstruction * rec
            losses["g_reconstruction"] = float(rec.detach())
        if use_adv:
            adv = _clamped_log(1.0 - state.discriminator(torch.cat([fake, cond], dim=1))).mean()
            g_total = g_total + config.w_adversarial * adv
            losses["g_adversarial"] = float(adv.detach())
        if use_cnt:
            counter_in = torch.cat([fake, cond[:, :5]], dim=1)
            pred_counts = state.counter(counter_in)
            bound = data.counts[idx]
            if config.strict_counting:
                indicator = (pred_counts > bound).float()
            else:
                indicator = (pred_counts >= bound).float()
            cnt = indicator.mean()  # piecewise constant: logged, gradient-free
            g_total = g_total + config.w_counting * state.counter_accuracy * cnt
            losses["g_counting"] = float(cnt.detach())
        g_total.backward()
        state.opt_g.step()
        losses["g_total"] = float(g_total.detach())
        state.step += 1
        _check_finite(losses, state, checkpoint)
        state.history.append({"phase": "gan", "step": state.step, **losses})
    return state


def train_autoencoder(manifest_path: str | Path, state: TrainState, steps: int) -> TrainState:
    """Pure reconstruction loop; the parity target for zero-weighted runs."""
    config = state.config
    data = load_training_data(manifest_path)
    state.generator.train()
    for idx in _batches(len(data), config.batch_size, steps, config.seed + 31):
        cond = data.conditions[idx]
        real = data.designs[idx]
        state.opt_g.zero_grad()
        fake = state.generator(cond)
        rec = torch.mean((fake - real) ** 2)
        loss = config.w_reconstruction * rec
        loss.backward()
        state.opt_g.step()
        state.step += 1
        state.history.append(
            {
                "phase": "autoencoder",
                "step": state.step,
                "g_reconstruction": float(rec.detach()),
                "g_total": float(loss.detach()),
            }
        )
    return state


def infer(
    state: TrainState,
    manifest_path: str | Path,
    out_dir: str | Path,
) -> list[Path]:
    """Generate one design per record, in the single-channel container format.

    Outputs are resampled from the node grid back to the element grid so
    downstream evaluation compares like with like; per-design wall times
    land in metrics.csv.
    """
    data = load_training_data(manifest_path)
    if data.conditions.shape[1] != 6:
        raise DataError(f"expected 6 condition channels, got {data.conditions.shape[1]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state.generator.eval()
    paths = []
    rows = []
    for k in range(len(data)):
        start = time.perf_counter()
        with torch.no_grad():
            fake = state.generator(data.conditions[k : k + 1])
        design = torch.nn.functional.interpolate(
            fake, size=(data.ny, data.nx), mode="bilinear", align_corners=True
        )[0, 0].numpy()
        design = np.clip(design, 0.0, 1.0)
        path = out_dir / f"{k:06d}.tpfg"
        shards.write_design(path, design)
        rows.append((k, time.perf_counter() - start, float(design.mean())))
        paths.append(path)
    with open(out_dir / "metrics.csv", "w") as fh:
        fh.write("index,seconds,mean_value\n")
        for k, seconds, mean_value in rows:
            fh.write(f"{k},{seconds:.6f},{mean_value:.6f}\n")
    return paths

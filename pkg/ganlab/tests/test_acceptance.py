"""Secondary acceptance: architecture, overfit, gradients, round-trip."""

import json
import subprocess
import sys
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from ganlab import infer, new_state, pretrain_counter, train_gan
from ganlab.models import GeneratorSpec, build_generator
from ganlab.training import TrainingConfig


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL")
        raise
    print(f"[acceptance] {name}: PASS")


def test_generator_shape_trajectory():
    """The encoder/bridge/decoder sizes match the layer table exactly."""
    with criterion("generator trajectory 101-50-25-13-7-4-7-13-25-50-101"):
        for nf in (8, 16):
            gen = build_generator(GeneratorSpec(nf=nf))
            assert gen.spatial_trajectory(101) == (101, 50, 25, 13, 7, 4, 7, 13, 25, 50, 101)
            with torch.no_grad():
                out = gen(torch.rand(2, 6, 101, 101))
            assert out.shape == (2, 1, 101, 101)
            assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


def test_overfit_eight_samples(overfit_manifest):
    """Reconstruction MSE falls below 0.01 within 2000 steps, losses finite."""
    with criterion("overfit-8: MSE < 0.01 within 2000 steps, finite losses"):
        config = TrainingConfig(
            nf=8, counter_nf=8, batch_size=8, seed=0, lr_generator=5e-3
        )
        state = pretrain_counter(overfit_manifest, epochs=2, config=config)
        reached = False
        for _ in range(20):  # 20 x 100 steps, early exit, bounded by 2000
            state = train_gan(overfit_manifest, state, steps=100)
            recs = [h["g_reconstruction"] for h in state.history if "g_reconstruction" in h]
            if recs[-1] < 0.01:
                reached = True
                break
        assert reached, f"MSE still {recs[-1]:.4f} after {state.step} steps"
        assert state.step <= 2000
        for row in state.history:
            for key, value in row.items():
                if isinstance(value, float):
                    assert np.isfinite(value), f"{key} non-finite at {row}"


def test_gradient_checks(overfit_manifest):
    """Pixel-loss gradient matches finite differences; gradient reaches the
    first encoder layer on the very first step."""
    with criterion("reconstruction gradient FD check (1e-4) + first-layer flow"):
        torch.manual_seed(1)
        target = torch.rand(1, 1, 5, 5, dtype=torch.float64)
        pred = torch.rand(1, 1, 5, 5, dtype=torch.float64, requires_grad=True)
        loss = torch.mean((pred - target) ** 2)
        (analytic,) = torch.autograd.grad(loss, pred)
        h = 1e-6
        base = pred.detach().view(-1)
        for e in range(base.numel()):
            up = base.clone()
            dn = base.clone()
            up[e] += h
            dn[e] -= h
            fd = (
                torch.mean((up.view(1, 1, 5, 5) - target) ** 2)
                - torch.mean((dn.view(1, 1, 5, 5) - target) ** 2)
            ) / (2 * h)
            rel = abs(float(analytic.view(-1)[e] - fd)) / max(abs(float(fd)), 1e-12)
            assert rel <= 1e-4

        config = TrainingConfig(nf=4, counter_nf=8, batch_size=8, seed=2)
        state = train_gan(overfit_manifest, new_state(config), steps=1)
        grad = state.generator.encoder[0].down.weight.grad
        assert grad is not None and float(grad.norm()) > 0.0


def test_round_trip_with_primary(overfit_manifest, tmp_path):
    """Inference output feeds the producer's evaluation CLI unchanged."""
    with criterion("infer -> primary evaluate CLI round-trip"):
        config = TrainingConfig(nf=4, counter_nf=8, batch_size=8, seed=4)
        state = train_gan(overfit_manifest, new_state(config), steps=5)
        out = tmp_path / "generated"
        paths = infer(state, overfit_manifest, out)
        assert len(paths) == 8
        assert (out / "metrics.csv").exists()

        # complexity sweep on the trained model: the bar-count plane drives output
        from ganlab.training import load_training_data

        data = load_training_data(overfit_manifest)
        state.generator.eval()
        low = data.conditions[:1].clone()
        high = data.conditions[:1].clone()
        low[:, 5] *= 0.1
        high[:, 5] *= 1.5
        with torch.no_grad():
            delta = torch.norm(state.generator(low) - state.generator(high))
        assert float(delta) > 0.0

        report_dir = tmp_path / "report"
        result = subprocess.run(
            [
                sys.executable, "-m", "topoforge.cli", "evaluate",
                "--candidates", str(out),
                "--manifest", str(overfit_manifest),
                "--out", str(report_dir),
            ],
            capture_output=True,
            text=True,
        )
        assert result.returncode == 0, result.stderr
        summary = json.loads((report_dir / "report.json").read_text())
        assert summary["samples"] == 8
        for section in ("complexity", "volume", "compliance"):
            assert section in summary
            assert all(0.0 <= rate <= 1.0 for rate in summary[section].values())
        assert summary["mse"] is not None
        assert (report_dir / "report.csv").exists()
        assert (report_dir / "distributions.png").exists()

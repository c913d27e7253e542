import numpy as np
import pytest

from topoforge.analysis import BarGraphParams
from topoforge.dataset import GenerationConfig
from topoforge.fem import DesignDomain
from topoforge.scenarios import Load, Scenario
from topoforge.simp import SimpConfig, optimize


def cantilever_scenario(nx: int, ny: int, volfrac: float = 0.4) -> Scenario:
    """Left edge fully fixed, unit downward load at mid-height of the right edge."""
    return Scenario(
        nx=nx,
        ny=ny,
        fixed_nodes=tuple((0, j) for j in range(ny + 1)),
        loads=(Load(nx, ny // 2, 270.0),),
        volfrac_field=np.full((nx + 1, ny + 1), volfrac),
        complexity=1,
        split="train",
        seed=0,
    )


def tiny_generation_config(**overrides) -> GenerationConfig:
    """Fast screen-friendly settings for 24x24 grids used across tests."""
    defaults = dict(
        nx=24,
        ny=24,
        simp=SimpConfig(volfrac=0.3, max_iters=120),
        bar_params=BarGraphParams(spur_px=3.0, attach_radius=4.0),
        shard_size=2,
        screen_grey_limit=0.25,
    )
    defaults.update(overrides)
    return GenerationConfig(**defaults)


@pytest.fixture(scope="session")
def small_cantilever():
    """Converged 40x20 cantilever run shared by analysis/report tests."""
    scenario = cantilever_scenario(40, 20)
    trace = optimize(DesignDomain(40, 20), scenario, SimpConfig(volfrac=0.4, max_iters=150))
    assert trace.converged
    return scenario, trace


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small generated validation split reused by dataset/CLI/acceptance tests."""
    from topoforge.dataset import generate_split

    out = tmp_path_factory.mktemp("tiny-ds")
    manifest = generate_split(
        "validation", 4, base_seed=100, workers=1, config=tiny_generation_config(), out_dir=out
    )
    return manifest

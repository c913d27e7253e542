"""ganlab: toy-scale conditional dual-discriminator GAN over topoforge shards."""

__version__ = "0.1.0"

from .models import (
    CounterSpec,
    GeneratorSpec,
    build_compliance_predictor,
    build_counter,
    build_discriminator,
    build_generator,
)
from .training import (
    DataError,
    DivergenceError,
    TrainingConfig,
    TrainState,
    infer,
    new_state,
    pretrain_counter,
    train_autoencoder,
    train_gan,
)

__all__ = [
    "CounterSpec",
    "GeneratorSpec",
    "build_compliance_predictor",
    "build_counter",
    "build_discriminator",
    "build_generator",
    "DataError",
    "DivergenceError",
    "TrainingConfig",
    "TrainState",
    "infer",
    "new_state",
    "pretrain_counter",
    "train_autoencoder",
    "train_gan",
]

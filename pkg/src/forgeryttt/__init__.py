"""Image manipulation localization with self-supervised test-time training."""

from .errors import ForgeryTTTError
from .model import ForgeryTTT, ModelConfig, build_model, predict
from .seeding import derive_seed, rng_for

__all__ = ["ForgeryTTT", "ForgeryTTTError", "ModelConfig", "build_model", "derive_seed", "predict", "rng_for"]
__version__ = "0.1.0"

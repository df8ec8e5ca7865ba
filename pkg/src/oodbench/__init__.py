"""Post-hoc out-of-distribution detection evaluation for classification and segmentation."""

from .adapters import DatasetAdapter, DatasetManifest, adapt, load_image
from .augment import (
    AugmentationSpec,
    DarkSpots,
    GaussianNoisePatch,
    OODAugmentation,
    PatchOverlay,
    apply,
    ood_fraction,
    register_augmentation,
)
from .core import Rng, Sample, TaskType, derive_stream_seed, logsumexp, rng_new, softmax
from .frtd import load_tensor, save_tensor
from .methods import ODIN, EnergyBased, MaxClassBaseline, OODMethod, register_method
from .metrics import BinnedAuRoC, OODAuRoC, PixelAuRoC, ScoreHistogram, auroc
from .model import LogitReplayModel, MicroNet, Model, micro_net_init
from .runner import ExperimentConfig, ExperimentReport, run_experiment

__version__ = "0.1.0"

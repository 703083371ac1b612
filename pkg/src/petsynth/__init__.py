"""Semi-supervised multitask translation of ASL/T1 MRI slices to PET,
benchmarked on deterministic synthetic phantoms."""

from .datasets import Batch, DatasetHandle, Modality, Slice, batch_stream, load_manifest, normalize
from .evaluator import AblationConfig, FoldResult, anova_rm, crossvalidate, report, run_ablation
from .losses import SsimParams, mse, paired_loss, psnr, ssim, unpaired_loss
from .model import ForwardResult, ModelConfig, TranslationNet, build, forward, predict
from .phantoms import Hotspot, PhantomSpec, PhantomTriple, generate_corpus, generate_subject
from .trainer import TrainSchedule, TrainState, count_parameters, step, train

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "Batch",
    "DatasetHandle",
    "FoldResult",
    "ForwardResult",
    "Hotspot",
    "Modality",
    "ModelConfig",
    "PhantomSpec",
    "PhantomTriple",
    "Slice",
    "SsimParams",
    "TrainSchedule",
    "TrainState",
    "TranslationNet",
    "anova_rm",
    "batch_stream",
    "build",
    "count_parameters",
    "crossvalidate",
    "forward",
    "generate_corpus",
    "generate_subject",
    "load_manifest",
    "mse",
    "normalize",
    "paired_loss",
    "predict",
    "psnr",
    "report",
    "run_ablation",
    "ssim",
    "step",
    "train",
    "unpaired_loss",
]

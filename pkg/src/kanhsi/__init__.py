"""KAN layers, architectures and training for hyperspectral pixel classification."""

from .tensor import Tensor, gradcheck, no_grad
from .basis import SplineGrid, RbfGrid, make_grid
from .layers import KanConfig, KanLinear, KanConv, Attention, ConvSpec
from .models import (
    ARCHITECTURES,
    KanSettings,
    Model,
    ModelSpec,
    SubstitutionPlan,
    build_architecture,
    param_count,
    substitute,
)
from .data import HsiCube, LabelGrid, gen_synthetic, stratified_split
from .train import Adam, TrainConfig, compute_metrics, cross_entropy, evaluate, train_epoch

__version__ = "0.1.0"

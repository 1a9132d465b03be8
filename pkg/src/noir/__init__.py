"""Latent operators between hypernetwork-modulated implicit neural representations."""

from .errors import ConfigError, ContractError, DimensionMismatch
from .inr import ModulatedSiren, SignalSample, SirenConfig, fit_latent, render_grid
from .meta import MetaConfig, train_meta
from .operator import (LatentPairSet, LinearOperator, MLPOperator, OperatorConfig, Pipeline,
                       fit_linear_operator, predict_pipeline, train_operator)
from .reno import ResolutionSet, dice_by_resolution, epsilon_estimate
from .tasks import PairedDataset, TaskSpec, generate

__version__ = "0.1.0"

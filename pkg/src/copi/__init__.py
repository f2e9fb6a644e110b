"""Local learning rules for deep networks whose layer inputs are decorrelated by lateral weights."""

from copi.analysis import CompressedNetwork, LinearReadout, compress, feature_maps, fit_readout, offdiag_norm
from copi.data import BatchPlan, Dataset, batches, load_cifar10, load_mnist, load_named, synth_gaussian
from copi.decorr_lab import LabConfig, LabResult, run_lab
from copi.errors import ConfigError, ContractError, DivergenceError, FormatError
from copi.network import Layer, LayerState, Network, build_network, forward, leaky_relu, leaky_relu_deriv
from copi.rules import (AdamState, adam_step, bio_copi_decorr_update, bp_update, copi_decorr_update,
                        copi_forward_update, error_signals, loss_and_output_delta)
from copi.tensor import diag_sq_mean, make_rng, matmul, outer_mean, rand_matrix
from copi.trainer import TrainConfig, TrainMetrics, evaluate, train

__version__ = "0.1.0"

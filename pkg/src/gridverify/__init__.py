"""Verification of low-dimensional ReLU controllers by input quantization
and exhaustive enumeration of the quantized state space.

The toolkit covers the full pipeline: synthetic lookup-table generation,
network training, bit-deterministic inference, exact enumeration-based
verification, and a simplified interval-propagation baseline verifier.
"""

__version__ = "0.1.0"

from .mlp import AffineLayer, Network, forward, forward_batch, load_network, save_network
from .quantize import (
    DenseLUT,
    ExplicitAxis,
    EnumerationMode,
    GridIndex,
    QuantScheme,
    UniformAxis,
    build_dense_lut,
    load_scheme,
    quantize_batch,
    quantize_point,
    quantize_scalar,
    save_scheme,
    states_for_property,
)
from .properties import Property, check_output, parse_property, parse_property_file, print_property
from .enumverify import Verdict, full_grid_eval, verify, verify_all
from .intervals import IntervalVerdict, bisect_verify, interval_forward
from .tables import (
    LookupTable,
    generate_synthetic_table,
    load_table,
    make_cas_scheme,
    policy_accuracy,
    save_table,
    score_error,
)
from .train import TrainConfig, loss_and_grad, train

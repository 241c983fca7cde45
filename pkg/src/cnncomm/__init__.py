"""Communication lower bounds, tilings and traffic models for CNN convolution layers."""

from .model import (ConvLayer, DerivedSizes, LayerFileError, ParallelMachine, PrecisionTriple,
                    SerialMachine, TwoBufferMachine, derive_sizes, load_layer, parse_layer,
                    validate_layer)
from .bounds import cp, parallel_lower_bound, serial_lower_bound, small_filter_dominates
from .tiler import (ParallelTiling, SerialTiling, parallel_lp_tiles, serial_lp_tiles,
                    two_buffer_tiles)
from .hbl import cnn_homomorphisms, lifted_homomorphisms, optimal_exponents
from .simulator import CacheModel, simulate_parallel_footprints, simulate_serial
from .volume import (blocking_volume_parallel, blocking_volume_serial, im2col_volume_serial,
                     naive_volume_serial, sweep)
from .presets import load_preset, preset_names

__all__ = [
    "ConvLayer", "DerivedSizes", "LayerFileError", "ParallelMachine", "PrecisionTriple",
    "SerialMachine", "TwoBufferMachine", "derive_sizes", "load_layer", "parse_layer",
    "validate_layer", "cp", "parallel_lower_bound", "serial_lower_bound",
    "small_filter_dominates", "ParallelTiling", "SerialTiling", "parallel_lp_tiles",
    "serial_lp_tiles", "two_buffer_tiles", "cnn_homomorphisms", "lifted_homomorphisms",
    "optimal_exponents", "CacheModel", "simulate_parallel_footprints", "simulate_serial",
    "blocking_volume_parallel", "blocking_volume_serial", "im2col_volume_serial",
    "naive_volume_serial", "sweep", "load_preset", "preset_names",
]

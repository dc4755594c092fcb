"""Quantized Generic Adam with error feedback: optimizer, parameter-server
simulator, quantizers, wire codec and trace verification."""

from .distributed import RunConfig, run_synchronous
from .optimizer import Hyperparams, OptimizerState, minimize, schedule_at, step
from .problems import GradientStream, logistic_synthetic, make_problem, mlp_tiny, quadratic
from .quantize import QuantizedTensor, Quantizer, dequantize, quantize_midpoint, quantize_ternary
from .trace import Trace
from .verify import compute_constants, theoretical_bound, verify_trace

__version__ = "0.1.0"

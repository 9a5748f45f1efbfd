"""Rate-distortion optimization: curves, allocation, sweeps, inference cost."""

from .layout import (TRANSFORM_CHOICES, LayerTransform, Section, aligned_basis, build_layer_transform,
                     parse_transform, reconstruct, split_blocks)
from .search import LayerProblem, RDCurve, build_rd_curves, step_grid, step_size_search
from .allocate import BitBudget, allocate_bits, lambda_ceiling
from .inference import (FlopCounter, acceleration, factored_forward, factored_multiplications,
                        network_acceleration, overhead_bits, overhead_elements)
from .sweep import (CompressionProblem, LayerQuant, QuantPlan, RDConfig, SweepPoint, frontier,
                    lagrangian_sweep, quantized_network)

"""SO(3)-covariant N-body networks built from Clebsch-Gordan products."""

from .errors import (ArgumentError, CapabilityError, CGNetError, DegeneracyError,
                     SelectionRuleError, TrainingError)
from .so3 import (EulerAngles, cartesian_to_spherical_basis, cg_block, cg_coefficient,
                  cg_matrix, little_d, random_rotation, wigner_d)
from .covariant import (CovariantVector, MixWeights, RepType, cg_product, cg_product_chain,
                        direct_sum, invariant_part, kappa, mix, rotate)
from .gates import (GateConfig, RelativePosition, apply_gate, embed_relative_position,
                    first_order_gate, gate_output_type, moment_gate, moment_tensor,
                    zeroth_order_gate)
from .scheme import CompositionScheme, SchemeNode, build_scheme, validate_scheme
from .network import Model, System, TrainOptions, backward, energy, forces, forward, train

__version__ = "0.1.0"

"""Small-signal stability certificates from differential passivity indices.

Devices (synchronous generators and droop inverters) report 2x2 output-
differential passivity matrices; the power network contributes an
input-differential passivity matrix equal to its linearized power-flow
Jacobian. Stability is certified when the two can be combined into a
positive-definite sum (semi-distributed) or when every device's scalar
index exceeds the network's shortage (fully distributed). An eigenvalue
oracle and a nonlinear simulator serve as ground truth.
"""

from .case import (BusRecord, CaseParseError, CaseValidationError, CdParams,
                   DeviceSpec, LineRecord, PowerSystemCase, QdParams, Setpoints,
                   SgParams, fixture_path, load_case, validate_case)
from .criteria import (AssessmentError, StabilityVerdict, fully_distributed_check,
                       run_two_level_assessment, semi_distributed_check)
from .devices import DomainError, device_odpm, linearize_device, with_diagonal_level
from .kernels import BACKEND
from .network import (PowerFlowError, build_admittance, build_idpm, kron_reduce,
                      operating_point, solve_power_flow)
from .oracle import closed_loop, eigen_verdict, verify_odp_frequency
from .sim import GroundFault, Scenario, StatePerturbation, simulate
from .harness import (BoundarySpec, PipelineError, SweepAxis, SweepSpec, analyze, boundary,
                      sweep)

__version__ = "0.1.0"

from .problem import STATUSES, CompiledSdp, SdpProblem, SdpSolution
from .scaling import ScalingRecord, scale_problem
from .sdpa import export_sdpa, import_sdpa, read_result, write_result
from .solver import SolverOptions, solve

__all__ = [
    "STATUSES", "CompiledSdp", "SdpProblem", "SdpSolution", "ScalingRecord", "scale_problem",
    "export_sdpa", "import_sdpa", "read_result", "write_result", "SolverOptions", "solve",
]

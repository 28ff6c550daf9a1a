"""macfi: an int8 CNN accelerator emulator with per-multiplier fault injection.

The emulated datapath is a units x lanes grid of signed 8x8-bit multipliers
(8x8 by default) whose 18-bit output lanes can be overridden by stuck-at,
constant, or pulsed faults; campaigns measure the resulting accuracy drop.
"""

from .campaign import (
    CampaignResult,
    RunRecord,
    SweepSpec,
    accuracy_drop,
    run_fault_sweep,
    run_heatmap,
    summarize_boxplot,
)
from .errors import MacfiError
from .faultctl import (
    FaultMap,
    FaultMode,
    FiRegisterFile,
    LaneFault,
    SplitMix64,
    derive_seed,
    materialize,
    parse_fault_spec,
    read_register,
    sample_random_fault_map,
    write_register,
)
from .macarray import (
    Emulator,
    ExecResult,
    classify_argmax,
    execute_plan,
    mac_dot,
    mult_lane,
)
from .model import (
    Dataset,
    LayerSpec,
    ModelGraph,
    load_dataset,
    load_model,
    reference_forward,
    save_dataset,
    save_model,
)
from .planner import ArrayConfig, ExecutionPlan, MacMicroOp, plan_layer, plan_model, plan_stats
from .qtensor import AccTensor, QTensor, dequantize, quantize, requantize

__version__ = "0.1.0"

__all__ = [
    "AccTensor",
    "ArrayConfig",
    "CampaignResult",
    "Dataset",
    "Emulator",
    "ExecResult",
    "ExecutionPlan",
    "FaultMap",
    "FaultMode",
    "FiRegisterFile",
    "LaneFault",
    "LayerSpec",
    "MacMicroOp",
    "MacfiError",
    "ModelGraph",
    "QTensor",
    "RunRecord",
    "SplitMix64",
    "SweepSpec",
    "accuracy_drop",
    "classify_argmax",
    "dequantize",
    "derive_seed",
    "execute_plan",
    "load_dataset",
    "load_model",
    "mac_dot",
    "materialize",
    "mult_lane",
    "parse_fault_spec",
    "plan_layer",
    "plan_model",
    "plan_stats",
    "quantize",
    "read_register",
    "reference_forward",
    "requantize",
    "run_fault_sweep",
    "run_heatmap",
    "sample_random_fault_map",
    "save_dataset",
    "save_model",
    "summarize_boxplot",
    "write_register",
]

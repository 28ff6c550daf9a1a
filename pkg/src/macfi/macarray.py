"""Emulated MAC-array execution with per-lane output overrides.

The grid is units x lanes int8 multipliers; every multiplier output passes a
fault mux that can force the 18-bit lane value (see faultctl). Idle lanes are
gated: a fault on a lane that carries no operands this cycle cannot fire.
Padded-zero taps do carry operands, so their muxes are live.

Two interchangeable kernels execute the packed layer programs: a compiled
extension (macfi._kernel) and a pure-Python twin (macfi._kernel_py). The
compiled one is preferred when built; set MACFI_KERNEL=python|compiled to
force a choice.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from .errors import EmptyLogits, SchemaError, ShapeError
from .faultctl import NO_FAULT, FaultMap, FaultMode, LaneFault
from .model import INPUT_ID
from .planner import ExecutionPlan, LayerProgram
from .qtensor import QTensor, ref_execute_layer, requantize_array, sat32

try:
    from . import _kernel
except ImportError:  # extension not built; pure-Python fallback only
    _kernel = None


def available_backends() -> list[str]:
    names = ["compiled"] if _kernel is not None else []
    return names + ["python"]


def get_kernel(name: str | None = None):
    """Resolve a kernel module by name, MACFI_KERNEL, or availability."""
    name = name or os.environ.get("MACFI_KERNEL")
    if name is None:
        return _kernel if _kernel is not None else _kernel_py
    if name == "python":
        return _kernel_py
    if name == "compiled":
        if _kernel is None:
            raise SchemaError("compiled kernel requested but the extension is not built")
        return _kernel
    raise SchemaError(f"unknown kernel backend {name!r} (choose 'compiled' or 'python')")


def default_backend() -> str:
    return get_kernel().BACKEND


def fault_engaged(fault: LaneFault, cycle: int) -> bool:
    """True when the lane's fault mux overrides the product at this cycle."""
    if fault.mode is FaultMode.PULSE:
        return fault.start <= cycle < fault.start + fault.length
    return fault.mode is not FaultMode.NONE


def mult_lane(a: int, b: int, fault: LaneFault = NO_FAULT, cycle: int = 0) -> int:
    """18-bit lane output for one int8 x int8 product under a fault descriptor."""
    if fault_engaged(fault, cycle):
        return 0 if fault.mode is FaultMode.STUCK_ZERO else fault.value
    return int(a) * int(b)


def mac_dot(pairs, unit: int, faults: FaultMap, cycle: int = 0) -> int:
    """Saturating 32-bit sum of one unit's lane outputs for one cycle.

    ``pairs`` has exactly one slot per lane: an (a, b) operand pair, or None
    for an idle lane (gated: contributes 0, fault mux bypassed).
    """
    if len(pairs) != faults.lanes:
        raise ShapeError(f"expected {faults.lanes} lane slots, got {len(pairs)}")
    total = 0
    for lane, pair in enumerate(pairs):
        if pair is None:
            continue
        a, b = pair
        total += mult_lane(a, b, faults.get(unit, lane), cycle)
    return sat32(total)


def classify_argmax(logits) -> int:
    """Smallest index attaining the maximum logit."""
    v = np.asarray(logits).reshape(-1)
    if v.size == 0:
        raise EmptyLogits("logits vector is empty")
    return int(np.argmax(v))


@dataclass(frozen=True)
class TraceEvent:
    """One fault-mux engagement: which lane fired, when, and what it emitted."""

    cycle: int
    layer_id: str
    unit: int
    lane: int
    dest: tuple[int, int, int]
    mode: str
    value: int


@dataclass
class ExecResult:
    outputs: dict[str, QTensor]
    logits: np.ndarray  # int8, flat view of the output layer
    cycles: int
    trace: list[TraceEvent] | None = None


class Emulator:
    """Executes one inference at a time; owns the cycle counter and accumulators.

    Instances are cheap. plan/faults are treated as immutable and may be
    shared across instances on different threads.
    """

    def __init__(self, plan: ExecutionPlan, faults: FaultMap | None = None,
                 kernel: str | None = None, trace: bool = False):
        cfg = plan.cfg
        self.plan = plan
        self.faults = faults if faults is not None else FaultMap(cfg.units, cfg.lanes)
        if (self.faults.units, self.faults.lanes) != (cfg.units, cfg.lanes):
            raise ShapeError(
                f"fault map is {self.faults.units}x{self.faults.lanes}, "
                f"array is {cfg.units}x{cfg.lanes}"
            )
        self._kernel = get_kernel(kernel)
        self.trace = trace
        self._farr = self.faults.to_arrays()
        self.cycle = 0

    @property
    def backend(self) -> str:
        return self._kernel.BACKEND

    def run(self, x: QTensor) -> ExecResult:
        plan = self.plan
        if x.dims != plan.input_shape:
            raise ShapeError(f"input dims {x.dims} do not match plan {plan.input_shape}")
        if x.scale != plan.input_scale:
            raise ShapeError(f"input scale {x.scale!r} does not match plan {plan.input_scale!r}")
        self.cycle = 0
        events: list[TraceEvent] | None = [] if self.trace else None
        env: dict[str, QTensor] = {INPUT_ID: x}
        outputs: dict[str, QTensor] = {}
        for prog in plan.programs:
            if prog.is_mac:
                out = self.run_layer_program(prog, env[prog.layer.inputs[0]], events)
            else:
                out = ref_execute_layer(prog.layer, [env[i] for i in prog.layer.inputs])
            env[prog.layer.id] = out
            outputs[prog.layer.id] = out
        logits = outputs[plan.output].data.reshape(-1)
        return ExecResult(outputs, logits, self.cycle, events)

    def run_layer_program(self, prog: LayerProgram, x: QTensor,
                          events: list[TraceEvent] | None = None) -> QTensor:
        """One conv/fc program: bias-preloaded accumulate, then requantize."""
        p = prog.packed
        cout, hout, wout = prog.out_shape
        acc3 = np.empty((cout, hout, wout), dtype=np.int32)
        acc3[:] = prog.bias[:, None, None]
        acc = acc3.reshape(-1)
        x_flat = np.ascontiguousarray(x.data).reshape(-1)
        if events is None:
            mode, value, start, length = self._farr
            self.cycle = self._kernel.run_program(
                p.unit, p.dest, p.act_idx, p.w_idx, x_flat, prog.weights_flat,
                acc, mode, value, start, length, self.plan.cfg.lanes, self.cycle,
            )
        else:
            self.cycle = self._run_traced(prog, x_flat, acc, events)
        return QTensor(requantize_array(acc3, prog.layer.m), prog.out_scale)

    def _run_traced(self, prog: LayerProgram, x_flat: np.ndarray,
                    acc: np.ndarray, events: list[TraceEvent]) -> int:
        """Object-level execution with trace capture; bit-identical to kernels."""
        p = prog.packed
        cout, hout, wout = prog.out_shape
        cyc = self.cycle
        for r in range(p.n_ops):
            u = int(p.unit[r])
            total = 0
            for lane in range(self.plan.cfg.lanes):
                ai = int(p.act_idx[r, lane])
                if ai == -2:
                    continue
                a = 0 if ai == -1 else int(x_flat[ai])
                b = int(prog.weights_flat[p.w_idx[r, lane]])
                fault = self.faults.get(u, lane)
                out = mult_lane(a, b, fault, cyc)
                if fault_engaged(fault, cyc):
                    d = int(p.dest[r])
                    o, rem = divmod(d, hout * wout)
                    events.append(TraceEvent(
                        cyc, prog.layer.id, u, lane,
                        (o, *divmod(rem, wout)), fault.mode.value, out,
                    ))
                total += out
            d = int(p.dest[r])
            acc[d] = sat32(int(acc[d]) + sat32(total))
            cyc += 1
        return cyc


def execute_plan(plan: ExecutionPlan, input: QTensor, faults: FaultMap | None = None,
                 kernel: str | None = None, trace: bool = False) -> ExecResult:
    """Run one inference; with an empty FaultMap the result is bit-identical
    to the reference pipeline."""
    return Emulator(plan, faults, kernel=kernel, trace=trace).run(input)

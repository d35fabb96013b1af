"""Discrete-event simulation and analysis of idle waves in bulk-synchronous
message-passing programs."""
from .comm import (
    Boundary,
    CostModel,
    Direction,
    Protocol,
    ProtocolConfig,
    ProtocolOverride,
    Topology,
    classify_protocol,
    message_cost,
    propagation_speed_model,
    sigma,
)
from .engine import MessageCompletion, PhaseKind, PhaseRecord, Scenario, Trace, resolve_message, simulate
from .perturbation import DelaySpec, NoiseSpec, injected_delay, sample_noise

__version__ = "0.1.0"

"""Simulator for reactive preamble jamming of UWB two-way ranging."""

from .phy import DEFAULT_DOMAINS, PacketConfig, default_config
from .receiver import DetectionThresholds, Outcome, receive_packet
from .ranging import Mode, SessionSchedule
from .attacker import AttackerSpec
from .simcore import Scenario, PairSpec, NodeSpec, run

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DOMAINS", "PacketConfig", "default_config", "DetectionThresholds", "Outcome",
    "receive_packet", "Mode", "SessionSchedule", "AttackerSpec", "Scenario", "PairSpec",
    "NodeSpec", "run",
]

"""Deterministic discrete-event simulator for the warning mesh."""

from quakemesh.sim.network import EventQueue, LinkSpec, VirtualNetwork
from quakemesh.sim.report import AuditResult, SimReport, audit
from quakemesh.sim.runner import FaultAction, Simulation, UnknownNode, apply_fault, run_scenario
from quakemesh.sim.signals import Burst, GaussianStreamSource, QuakeSource, inject_quake

__all__ = [
    "AuditResult",
    "Burst",
    "EventQueue",
    "FaultAction",
    "GaussianStreamSource",
    "LinkSpec",
    "QuakeSource",
    "SimReport",
    "Simulation",
    "UnknownNode",
    "VirtualNetwork",
    "apply_fault",
    "audit",
    "inject_quake",
    "run_scenario",
]

"""Verifiable causality analysis over versioned provenance graphs."""

__version__ = "0.1.0"

from .accumulator import Accumulator, Relation, TimestampKey
from .causality import CausalityQuery, ProofBundle, VerifyReport, analyze, verify_bundle
from .commitment import Commitment
from .hashcore import KeyPair
from .ingest import SynthConfig, parse_jsonl, synth
from .protocol import Admin, Cloud, EndpointLogger, RootMismatch, StateConfig
from .provgraph import EventRecord, Graph

__all__ = [
    "Accumulator",
    "Admin",
    "CausalityQuery",
    "Cloud",
    "Commitment",
    "EndpointLogger",
    "EventRecord",
    "Graph",
    "KeyPair",
    "ProofBundle",
    "Relation",
    "RootMismatch",
    "StateConfig",
    "SynthConfig",
    "TimestampKey",
    "VerifyReport",
    "analyze",
    "parse_jsonl",
    "synth",
    "verify_bundle",
]

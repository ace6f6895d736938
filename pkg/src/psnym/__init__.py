"""Bloom-filter based pseudonym validation for vehicular PKIs."""

from .analytics import QueueModelParams, Scheme, avg_system_time, compression_rate, false_positive_rate
from .credentials import FakePseudonymList, LifetimeMode, PcaRegistry, Pseudonym, element_key, get_scheme
from .filters import BfDelta, BloomFilter, CountingBloomFilter, FilterParams, delta_apply, delta_compute
from .service import PcaClient, PcaServer, PublicationState
from .validation import Outcome, TokenBucket, ValidatorConfig, VehicleValidator

__version__ = "0.1.0"

__all__ = [
    "BfDelta", "BloomFilter", "CountingBloomFilter", "FakePseudonymList", "FilterParams",
    "LifetimeMode", "Outcome", "PcaClient", "PcaRegistry", "PcaServer", "Pseudonym",
    "PublicationState", "QueueModelParams", "Scheme", "TokenBucket", "ValidatorConfig",
    "VehicleValidator", "avg_system_time", "compression_rate", "delta_apply", "delta_compute",
    "element_key", "false_positive_rate", "get_scheme",
]

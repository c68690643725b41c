"""Progress events emitted by estimators, tests and simulations.

Library code emits them only when a bus is supplied; the CLI subscribes a
renderer. Event payloads are plain dicts so handlers stay decoupled.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


class EventType(str, Enum):
    # Estimation
    FIT_CONVERGED = "fit.converged"  # {estimator, variant, iterations, kappa_hat}
    FIT_ESCALATED = "fit.escalated"  # {variant, from_delta, to_delta, kappa_hat}
    FIT_FAILED = "fit.failed"  # {estimator, code}

    # Specification tests
    BOOTSTRAP_REPLICATE = "bootstrap.replicate"  # {index, total, ok}
    TEST_DONE = "test.done"  # {model_id, lambda_hat, p_value}

    # Model selection
    SELECTION_GRID_POINT = "selection.grid_point"  # {model_id, delta, lambda_hat}
    SELECTION_DONE = "selection.done"  # {selected}

    # Simulation
    SIMULATION_REPLICATION = "simulation.replication"  # {index, total, failures}
    SIMULATION_DONE = "simulation.done"  # {reps}


@dataclass
class Event:
    type: EventType
    data: dict[str, Any] = field(default_factory=dict)
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.timestamp == 0.0:
            self.timestamp = time.time()

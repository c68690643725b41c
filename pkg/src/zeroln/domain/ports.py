"""Port interfaces for dependency inversion.

The domain layer declares what it needs from its collaborators; the
application and infrastructure layers supply implementations. This keeps
the estimators free of I/O and of any knowledge of how progress is shown.
"""

from __future__ import annotations

from typing import Callable, Protocol

from zeroln.domain.models.data import Dataset
from zeroln.domain.models.events import Event, EventType
from zeroln.domain.models.results import FitResult
from zeroln.domain.options import FitOptions

EventHandler = Callable[[Event], None]


class EventBusPort(Protocol):
    """Interface for progress pub/sub."""

    def on(self, event_type: EventType, handler: EventHandler) -> Callable[[], None]: ...
    def on_prefix(self, prefix: str, handler: EventHandler) -> Callable[[], None]: ...
    def on_all(self, handler: EventHandler) -> Callable[[], None]: ...
    def emit(self, event: Event) -> None: ...


class Estimator(Protocol):
    """Anything that maps a dataset and options to a fit, e.g. ``fit_iols``.

    The pairs bootstrap re-runs it on every resample.
    """

    def __call__(self, data: Dataset, opts: FitOptions, /) -> FitResult: ...


def emit(bus: EventBusPort | None, event_type: EventType, **data: object) -> None:
    """Emit on ``bus`` when one is attached."""
    if bus is not None:
        bus.emit(Event(type=event_type, data=dict(data)))

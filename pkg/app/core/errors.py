"""Exception hierarchy shared by services and the command line."""
from typing import Iterable, List, Tuple


class PuccilabError(Exception):
    """Base class for all PucciLab failures."""

    exit_code = 3


class ConfigurationError(PuccilabError):
    """Raised for invalid or inconsistent configuration."""

    exit_code = 2


class DegenerateDensityError(PuccilabError):
    """Raised when rejection sampling accepts almost nothing."""


class DomainError(PuccilabError):
    """Raised when a point that must lie in the domain does not."""


class EmptyStripError(PuccilabError):
    """Raised when a boundary strip contains no vertices."""


class InputError(PuccilabError):
    """Raised for malformed numeric input (shapes, symmetry, finiteness)."""


class PartitionError(PuccilabError):
    """Raised when no partition of the domain can be built."""


class ReflectedNeighborhoodError(PuccilabError):
    """Raised under the strict policy when reflected neighborhoods are empty."""

    def __init__(self, triples: Iterable[Tuple[int, int, float]]):
        self.triples: List[Tuple[int, int, float]] = [
            (int(i), int(j), float(r)) for i, j, r in triples
        ]
        shown = ", ".join(f"(i={i}, j={j}, r={r:.6g})" for i, j, r in self.triples[:10])
        more = f" and {len(self.triples) - 10} more" if len(self.triples) > 10 else ""
        super().__init__(f"Empty reflected neighborhood for {shown}{more}")

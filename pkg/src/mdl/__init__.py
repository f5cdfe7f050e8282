"""Numerical toolkit for differentiability spaces from admissible inverse systems.

Modules: ``metric_graph`` (metric graphs with edge-interior points),
``inverse_system`` (towers of graphs and their axioms), ``limit_space``
(depth-truncated limit with distance brackets), ``fragments`` (metric
differentials, lengths, area formula), ``lip_analysis`` (Lip/lip and
canonical seminorms), ``alberti`` (Alberti representations), ``blowup``
(blow-ups and factoring checks) and ``cli``.
"""

from .inverse_system import InverseSystem, generate_standard, validate
from .limit_space import LimitSpace
from .metric_graph import AdmissibilityProfile, GraphError, GraphPoint, GraphPoints, MetricGraph

__all__ = [
    "AdmissibilityProfile",
    "GraphError",
    "GraphPoint",
    "GraphPoints",
    "InverseSystem",
    "LimitSpace",
    "MetricGraph",
    "generate_standard",
    "validate",
]
__version__ = "0.1.0"

"""routeflow: route flow inference from link counts on a network."""

from .errors import RouteflowError

__version__ = "0.1.0"

__all__ = ["RouteflowError", "__version__"]

"""Two-phase home-location prediction from geotagged check-ins."""

__version__ = "0.1.0"

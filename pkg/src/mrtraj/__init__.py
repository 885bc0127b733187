"""Multi-robot trajectory planning: lattice MAPF, safe corridors and joint trajectory optimisation."""

__version__ = "0.1.0"

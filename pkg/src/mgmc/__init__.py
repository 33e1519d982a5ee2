"""Matrix completion by learned diffusion over row and column graphs."""

__version__ = "0.1.0"

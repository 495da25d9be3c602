"""Monte-Carlo laboratory for marked self-exciting arrival models and their
near-critical diffusion limits."""

__version__ = "0.1.0"

"""ssmkit: six structured state-space sequence models, one set of engines.

Linear state-space layers (diagonal and diagonal-plus-low-rank, time-invariant
and input-gated) with three interchangeable execution engines (sequential
recurrence, work-efficient parallel scan, FFT convolution), principled
initializers, gated scaffolding, a minimal reverse-mode training stack, and
desk-scale task generators with a benchmark/verification CLI.
"""

__version__ = "0.1.0"

from . import types  # noqa: F401

__all__ = ["types", "__version__"]

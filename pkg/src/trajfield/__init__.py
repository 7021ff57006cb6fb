"""trajfield: dynamic novel view synthesis with DCT trajectory fields.

A CPU-only research library: a spacetime radiance field whose output
includes a per-point motion trajectory expressed in a cosine basis, an
occlusion-aware volumetric renderer that can warp radiance between any
two frames, the full training objective and schedules, and a synthetic
scene generator with exact ground truth for validation.
"""

__version__ = "0.1.0"

"""bigstep: smoke simulation at large time-steps with learned correction and
temporal frame interpolation.

The pipeline runs a semi-Lagrangian grid solver at a large time-step, corrects
each large-step state toward the corresponding small-time-step result with a
U-Net, and synthesises the intermediate frames by flow-based interpolation.
"""

from bigstep.fields import FlowField, GridSpec, ScalarField, VectorField

__all__ = ["GridSpec", "ScalarField", "VectorField", "FlowField"]

__version__ = "0.1.0"

"""Fluid-queue availability forecasts for EV charging stations and
corridor charging plans that use them."""

from . import arrivals, discrete_sim, evsp, fluid_queue, harness

__version__ = "0.1.0"

__all__ = ["arrivals", "discrete_sim", "evsp", "fluid_queue", "harness", "__version__"]

"""Deep-learning-aided routing for aeronautical ad-hoc networks.

Submodules are imported on demand so that ``aanet.cli`` can set thread
limits before numpy loads.
"""

__version__ = "0.1.0"

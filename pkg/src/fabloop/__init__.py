"""Hardware-free simulator for closed-loop defect repair in robot-arm FDM printing."""

__version__ = "0.1.0"

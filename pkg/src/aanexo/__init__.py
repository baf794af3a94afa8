"""Assist-as-needed knee exoskeleton control: EMG torque estimation, fuzzy
assistance-mode inference and constrained nonlinear MPC, in simulation."""

__version__ = "0.1.0"

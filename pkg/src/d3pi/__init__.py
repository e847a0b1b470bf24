"""
Distributed Policy Iteration
^^^^^^^^^^^^^^^^^^^^^^^^^^^^

Model-free distributed policy iteration for networks of identical linear
systems, together with the patterned linear algebra it relies on, a
black-box network simulator and a model-based LQR oracle.
"""

__version__ = "0.1.0"

"""
Distributed Policy Iteration Tools
^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^^

Command line benchmark harness around the `d3pi` library: configuration
files, CSV result files, network size sweeps and a self check of the
structured algebra.
"""

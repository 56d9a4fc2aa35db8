"""
btn-sim
Simulator and verification harness for the biological transport network model
"""

__version__ = '0.1.0'

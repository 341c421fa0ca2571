"""
One-Step MPC - 到達可能集合の内近似を用いた一段予測制御
"""

__version__ = "0.1.0"
__author__ = "AL"

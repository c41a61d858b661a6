"""
nullctl: desk-scale null controllability of a coupled heat / degenerate
parabolic system with switching controls
"""

__version__ = '1.0.0'

"""
CorrLeak modules
Correlation inference attacks against trained classifiers
"""

__version__ = '1.0.0'

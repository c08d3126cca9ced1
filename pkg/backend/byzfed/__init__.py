"""
ByzFed package initialization
Byzantine-resilient federated multi-task representation learning harness
"""

__version__ = "1.0.0"

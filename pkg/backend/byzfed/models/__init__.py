"""
Configuration, settings and record models
"""

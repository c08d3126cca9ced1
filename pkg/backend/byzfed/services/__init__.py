"""
Model math, data, aggregation and the round engine
"""

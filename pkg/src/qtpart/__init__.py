"""Toy intra codec with learned quadtree split pruning.

A deterministic single-mode intra codec searches quadtree partitions
exhaustively; a cost-regression network or a two-depth value-learning
agent predicts when exploring a split is pointless, and evaluation
utilities measure the saved work (processed pixels) against the coding
efficiency given up (rate delta between RD curves).
"""

__version__ = "0.1.0"

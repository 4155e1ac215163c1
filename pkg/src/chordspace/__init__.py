"""Chord progression analysis toolkit.

Parses guitar-chart chord symbols, trains chord embeddings and language
models over progressions, and evaluates next-chord predictions against
human annotations.
"""

__version__ = "0.1.0"

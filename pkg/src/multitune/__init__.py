"""Multilingual tuning strategies for seq2seq summarization at desk scale."""
__version__ = "0.1.0"

"""Cross-utterance context for Conformer transducers, on a small NumPy autograd."""
__version__ = "0.1.0"

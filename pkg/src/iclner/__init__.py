"""NER as in-context text generation: marker-format prompts, kNN-retrieved
demonstrations, yes/no self-verification, span-level scoring."""

__version__ = "0.1.0"

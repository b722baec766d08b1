"""Supervised document classification with cooperatively iterated embeddings.

Subpackages:
    corpus     text ingestion, vocabulary, folds, corpus files
    synth      generative topic-model sampler with known latents
    model      cooperative forward pass and checkpoints
    diff       losses and exact reverse-mode gradients
    train      Adam training loop and evaluation metrics
    oracle     classical mean-field inference and brute-force posteriors
    interpret  word-relevance recovery from embeddings
    cli        command-line interface
"""

__version__ = "0.1.0"

"""Correspondence-autoencoder acoustic word embeddings and ABX evaluation.

Train recurrent encoder-decoder models on mono- or bilingual spoken-word
corpora, embed speech segments of any length into fixed-size vectors and
measure phone/word discrimination with machine ABX tasks.
"""

__version__ = "0.1.0"

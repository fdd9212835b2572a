"""seedline: generate, score, and curate short lyric lines with a small LSTM-VAE."""

__version__ = "0.1.0"

"""Audio-to-score alignment with learned (Siamese CNN) frame similarity and DTW."""

__version__ = "0.1.0"

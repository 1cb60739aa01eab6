"""remixer: end-to-end neural music remixing.

Joint source separation and per-source volume control over a time-domain
masking network, with the full evaluation stack (remix SDR family,
projection-based separation scores, least-squares loudness differences),
synthetic data generation, a training loop, an HTTP inference service, and
a command-line entry point.
"""

__version__ = "0.1.0"

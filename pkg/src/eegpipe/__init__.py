"""EEG emotion classification pipeline.

Deterministic DSP feature extraction, a from-scratch GRU sequence
classifier trained with manual backpropagation through time, classical
baselines, and evaluation reports.
"""

__version__ = "0.1.0"

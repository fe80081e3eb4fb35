"""Raw EEG dataset conversion into the training engine's epoch-file format."""

__version__ = "0.1.0"

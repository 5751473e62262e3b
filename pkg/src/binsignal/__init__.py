"""binsignal: 1D signal representations of file binaries and 1D ResNet classifiers."""
__version__ = "0.1.0"

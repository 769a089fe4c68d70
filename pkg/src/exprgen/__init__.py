"""RBM and convolutional GAN feature learning for microarray tissue classification."""

__version__ = "0.1.0"

"""FaceHop: channel-wise Saab features and logistic-regression ensembles for 32x32 faces."""

__version__ = "0.1.0"

"""rexl: learned sequential-masking saliency maps for black-box image classifiers."""

__version__ = "0.1.0"

"""Malaria blood-smear cell classification: dataset handling, an RBF-SVM
baseline, two deep CNNs, transfer-learning regimes over three pretrained
backbones, a metrics suite, and export to a browser-loadable bundle."""

__version__ = "0.1.0"

"""Cross-view EEG pre-training: views, asymmetric cross-attention encoder, masked contrastive training."""

__version__ = "0.1.0"

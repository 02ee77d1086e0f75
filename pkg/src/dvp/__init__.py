"""Unsupervised image denoising and noise-variance estimation with a deep
variation prior, on a small self-contained numpy autodiff stack."""

__version__ = "0.1.0"

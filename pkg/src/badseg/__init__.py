"""badseg: a desk-scale laboratory for two-stage backdoor attacks on
prompt-driven video segmentation models."""

__version__ = "0.1.0"

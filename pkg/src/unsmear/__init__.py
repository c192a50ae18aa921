"""unsmear - filtered iterative denoising for linear inverse problems."""

__version__ = "0.1.0"
__app_name__ = "unsmear"

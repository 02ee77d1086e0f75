from .metrics import psnr, ssim, variance_metrics, VarianceMetrics
from .verify import (MonteCarloReport, verify_appendix_a, verify_prop2, verify_theorem1,
                     theorem1_grid)

__all__ = ["psnr", "ssim", "variance_metrics", "VarianceMetrics", "MonteCarloReport",
           "verify_appendix_a", "verify_prop2", "verify_theorem1", "theorem1_grid"]

"""Rotational invariant estimators for rectangular matrix denoising.

Given ``Y = sqrt(snr) S + Z`` with bi-rotationally invariant noise ``Z``, the
estimators keep the singular vectors of ``Y`` and replace its singular values
by optimal ones computed from the observed spectrum and the noise R-transform.
"""

__version__ = "0.1.0"

from .errors import RIEError  # noqa: E402
from .estimators import (  # noqa: E402
    DenoisingInstance,
    ShrinkageResult,
    exact_xi_prop1,
    gaussian_rie,
    general_rie,
    mse,
    oracle_rie,
)
from .freeprob import NoiseFamily, rect_r_transform  # noqa: E402
from .models import EnsembleSpec  # noqa: E402
from .spectra import EmpiricalSpectrum, stieltjes, svd_decompose  # noqa: E402

__all__ = [
    "DenoisingInstance",
    "EmpiricalSpectrum",
    "EnsembleSpec",
    "NoiseFamily",
    "RIEError",
    "ShrinkageResult",
    "__version__",
    "exact_xi_prop1",
    "gaussian_rie",
    "general_rie",
    "mse",
    "oracle_rie",
    "rect_r_transform",
    "stieltjes",
    "svd_decompose",
]

"""Full-reference (SSIM, FSIM) and no-reference (BRISQUE) image quality metrics."""

from dataclasses import dataclass, field

from . import brisque as _brisque_mod
from . import fsim as _fsim_mod
from . import ssim as _ssim_mod
from .brisque import brisque, brisque_features
from .fsim import fsim
from .ssim import ssim


def metric_metadata():
    return {
        "ssim": dict(_ssim_mod.PARAMS),
        "fsim": dict(_fsim_mod.PARAMS),
        "brisque": dict(_brisque_mod.PARAMS, model=_brisque_mod.default_model().version),
    }


@dataclass
class IqaReport:
    ssim: float
    fsim: float
    brisque_ref: float
    brisque_test: float
    metadata: dict = field(default_factory=metric_metadata)


def assess(ref, test):
    """All metrics for one (reference, test) pair."""
    return IqaReport(ssim(ref, test), fsim(ref, test), brisque(ref), brisque(test))


__all__ = ["IqaReport", "assess", "brisque", "brisque_features", "fsim", "metric_metadata", "ssim"]

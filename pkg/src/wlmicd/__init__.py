"""Change detection in serial grayscale images around a known tumor.

Typical use::

    from wlmicd import SimSpec, detect_changes, make_phantom, simulate

    img, tumor = make_phantom("blobs")
    sim = simulate.simulate(img, tumor, SimSpec("shrink", 0.3))
    mask = detect_changes(img, sim.image, tumor, normalize=False)
"""

from .detect import DetectConfig, Detection, StageError, detect_changes, run_detection
from .eroc import Roi, extract_roi
from .evaluate import EvalReport, auc, confusion, metrics, roc_curve
from .features import SimilarityMap, lmi, sim_rate, sim_rate_map, wlmi
from .normalize import hhm_normalize
from .pipeline import PipelineConfig, run_pipeline, run_sweep
from . import simulate
from .simulate import SimResult, SimSpec, make_phantom

__version__ = "0.1.0"

__all__ = [
    "DetectConfig", "Detection", "EvalReport", "PipelineConfig", "Roi", "SimResult",
    "SimSpec", "SimilarityMap", "StageError", "auc", "confusion", "detect_changes",
    "extract_roi", "hhm_normalize", "lmi", "make_phantom", "metrics", "roc_curve",
    "run_detection", "run_pipeline", "run_sweep", "sim_rate", "sim_rate_map",
    "simulate", "wlmi",
]

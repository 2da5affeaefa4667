"""Dynamic-image action anticipation at desk scale.

Approximate rank pooling turns short frame windows into dynamic images, an
autoencoder predicts the next dynamic image, and three classifier streams
are fused to label partially observed videos.
"""

from .rankpool import FrameSequence, approximate_rank_pool, coefficients, dynamic_image_sequence
from .recovery import recover_last_frame

__version__ = "0.1.0"

__all__ = ["FrameSequence", "approximate_rank_pool", "coefficients", "dynamic_image_sequence",
           "recover_last_frame", "__version__"]

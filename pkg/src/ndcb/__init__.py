"""Non-distortive cancelable biometric templates.

Train a unit-sphere embedding model with a triplet loss, train an image
distorter that maximizes visual difference while pinning embedding drift
below a margin, and evaluate the resulting authentication system.
"""

import os

# Cap BLAS threads before numpy loads so seeded runs are reproducible at a
# fixed thread count. NDCB_THREADS=1 gives fully deterministic execution.
if "NDCB_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["NDCB_THREADS"])

from ndcb.embedder import SphereEmbedder  # noqa: E402
from ndcb.generator import DistortionGenerator  # noqa: E402
from ndcb.simulate import TemplateAuthenticator  # noqa: E402

__all__ = ["SphereEmbedder", "DistortionGenerator", "TemplateAuthenticator"]
__version__ = "0.1.0"

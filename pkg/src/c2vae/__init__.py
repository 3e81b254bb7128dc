"""Contrastive copula VAE laboratory.

Subpackages map one-to-one onto the pipeline: ``tensor`` (autodiff core),
``copula`` (distributional primitives and samplers), ``model`` (networks,
Adam, checkpoints), ``training`` (objectives and the two-phase loop),
``data`` (procedural factor dataset), ``metrics`` (disentanglement scores),
``cli`` (command-line surface).
"""

__version__ = "0.1.0"

from .backend import backend_name
from .tensor import Tensor, no_grad

__all__ = ["Tensor", "no_grad", "backend_name", "__version__"]

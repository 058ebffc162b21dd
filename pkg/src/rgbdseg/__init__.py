"""RGB-D semantic segmentation on a from-scratch numpy autodiff core.

Two resnet-style encoders (one per modality) exchange information through a
pooling-attention gate at every stage and a cross-modal attention block at the
deepest stage; a shared decoder emits logits at four scales for a
deep-supervised cross-entropy loss.  Everything runs on the ``Tensor`` tape
defined here, with no framework dependencies.
"""

from .tensor import GradReport, Tensor, grad_check, no_grad, trace_kinks

__all__ = ["Tensor", "GradReport", "grad_check", "no_grad", "trace_kinks"]

__version__ = "0.1.0"

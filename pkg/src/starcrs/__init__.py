"""Screen-text-aware conversational recommender.

Dual text/vision context encoding over deterministically rendered screen
pages, knowledge-anchored contrastive fusion, and a prompt-trained backbone
for item recommendation and response generation, with a CLI and HTTP chat
service on top.
"""

from .autodiff import Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "__version__"]

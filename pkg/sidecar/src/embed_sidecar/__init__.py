"""Inference sidecar serving vision-transformer patch embeddings over HTTP."""

from .app import create_app
from .backbone import Backbone, BackboneInfo

__version__ = "0.1.0"

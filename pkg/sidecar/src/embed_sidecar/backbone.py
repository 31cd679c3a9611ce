"""Vision-transformer backbones exposing the patch-level penultimate feature map.

The served tensor is the encoder output for the patch tokens (class token
dropped) after the encoder's final layer norm; /health reports this tap
point so callers know exactly which activations they get. Inference runs in
deterministic single-threaded CPU mode: identical requests return
bit-identical tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image
from torchvision import models
from torchvision.transforms import functional as TF

TAP_POINT = "patch_tokens.post_final_layernorm"

# torchvision constructors for square-input ViTs; geometry is derived from
# the instantiated model, not hardcoded here
_ARCHITECTURES = {
    "vit_b_16": models.vit_b_16,
    "vit_b_32": models.vit_b_32,
    "vit_l_16": models.vit_l_16,
}

_IMAGENET_MEAN = [0.485, 0.456, 0.406]
_IMAGENET_STD = [0.229, 0.224, 0.225]


@dataclass(frozen=True)
class BackboneInfo:
    model: str
    weights: str
    patch_grid: int  # P
    dim: int  # D
    input_side: int
    tap_point: str = TAP_POINT


class Backbone:
    """A loaded ViT plus the feature-extraction forward pass."""

    def __init__(self, model_name: str = "vit_b_16", weights: str = "random", seed: int = 0):
        if model_name not in _ARCHITECTURES:
            raise ValueError(f"unknown model {model_name!r}; choose from {sorted(_ARCHITECTURES)}")
        torch.manual_seed(seed)
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)

        ctor = _ARCHITECTURES[model_name]
        if weights == "random":
            self._model = ctor(weights=None)
        elif weights == "pretrained":
            # resolves the torchvision default weights; needs download access
            self._model = ctor(weights="DEFAULT")
        else:
            self._model = ctor(weights=None)
            state = torch.load(weights, map_location="cpu", weights_only=True)
            self._model.load_state_dict(state)
        self._model.eval()

        side = self._model.image_size
        patch = self._model.patch_size
        self.info = BackboneInfo(
            model=model_name,
            weights=weights,
            patch_grid=side // patch,
            dim=self._model.hidden_dim,
            input_side=side,
        )

    @torch.no_grad()
    def embed_image(self, image: Image.Image) -> np.ndarray:
        """P x P x D float32 patch features for one RGB image of the exact
        input side; raises ValueError otherwise."""
        if image.size != (self.info.input_side, self.info.input_side):
            raise ValueError(
                f"image size {image.size} != required "
                f"({self.info.input_side}, {self.info.input_side})"
            )
        tensor = TF.to_tensor(image.convert("RGB"))
        tensor = TF.normalize(tensor, _IMAGENET_MEAN, _IMAGENET_STD).unsqueeze(0)

        model = self._model
        x = model._process_input(tensor)
        batch_class_token = model.class_token.expand(x.shape[0], -1, -1)
        x = torch.cat([batch_class_token, x], dim=1)
        x = model.encoder(x)
        patches = x[0, 1:, :]  # drop the class token
        P = self.info.patch_grid
        return patches.reshape(P, P, self.info.dim).numpy().astype(np.float32)

"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class SidecarConfig:
    """Listen address, model selection, device, and batch limit.

    Model ids of the form ``procedural:<dim>`` select the synthetic offline
    encoders, which need no weights and no network.  Any other id is loaded
    from the Hugging Face hub (install the ``hf`` extra); the intended real
    pairing is ``openai/clip-vit-base-patch32`` for the joint image-text
    model and ``facebook/dinov2-base`` for the image-only model.
    """

    host: str = "127.0.0.1"
    port: int = 8008
    image_text_model: str = "procedural:512"
    image_model: str = "procedural:768"
    device: str = "cpu"
    max_batch: int = 64

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ValueError(f"port out of range: {self.port}")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")

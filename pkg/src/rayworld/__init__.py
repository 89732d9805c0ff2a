"""Desk-scale multi-view autoregressive world model.

Multi-view video is tokenized by a multi-scale bitwise residual tokenizer and
modeled autoregressively over (scale, time) with a transformer whose attention
is positioned by relative rotary codes over 7D camera rays (Plücker moment,
direction, time). Generation runs frame by frame through a sliding latent
cache; a procedural ray-cast toy world provides fully-annotated training and
evaluation data.
"""

__version__ = "0.1.0"

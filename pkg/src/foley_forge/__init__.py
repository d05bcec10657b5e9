"""foley-forge: visually guided adversarial sound synthesis at desk scale."""

__version__ = "0.1.0"

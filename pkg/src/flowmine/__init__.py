"""Mine structured dialog workflows from support conversations and evaluate them."""

__version__ = "0.1.0"

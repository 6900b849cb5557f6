"""Shipped run configurations, resolved by name with ``--config NAME``."""

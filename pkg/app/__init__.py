"""NLI adversarial regularisation toolkit - Main Application Package."""

__version__ = "1.0.0"

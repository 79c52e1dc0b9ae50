"""Knowledge-driven query expansion for QA-style attribute value extraction."""

__version__ = "0.1.0"

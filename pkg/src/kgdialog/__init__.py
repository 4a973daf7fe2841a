"""Knowledge-graph question algebra and linked QA dialog synthesis toolkit."""

__version__ = "0.1.0"

"""Bi-modal (acoustic + text) sentiment classification of dialog utterances."""

__version__ = "0.1.0"

"""Multilingual TTS training mechanisms at desk scale."""

__version__ = "0.1.0"

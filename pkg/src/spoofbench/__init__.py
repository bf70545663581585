"""Benchmark toolkit for audio deepfake (anti-spoofing) detection."""

__version__ = "0.1.0"

"""Pixel-Words to Screen-Sentences: GUI understanding from screenshots."""

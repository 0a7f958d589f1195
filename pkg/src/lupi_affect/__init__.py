"""Learning using privileged information for pixel-based affect recognition.

Teachers trained on privileged feature streams (audio, video descriptors,
physiology) guide a pixel-only student that is deployed without them.
"""

__version__ = "0.1.0"

"""One-shot bimanual imitation: hand videos to keyframe programs, proliferation, diffusion policy."""

__version__ = "0.1.0"

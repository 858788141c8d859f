"""Vision-aided point-foot biped locomotion learning on a desk-scale simulator."""

__version__ = "0.1.0"

"""Two-timescale AI-RAN slicing simulator."""

__version__ = "0.1.0"

"""netcarta: network discovery evidence -> graph IR -> emulation scripts."""

__version__ = "0.1.0"

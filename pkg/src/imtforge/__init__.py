"""imtforge: toy-scale interactive adaptive neural machine translation."""

__version__ = "0.1.0"

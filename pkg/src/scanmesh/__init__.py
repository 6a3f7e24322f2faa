"""scanmesh: textured mesh reconstruction from posed RGB-D frames."""

__version__ = "0.1.0"

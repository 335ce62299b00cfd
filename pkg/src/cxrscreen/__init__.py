"""Cascaded chest x-ray screening: segmentation, pneumonia filtering, COVID-19 discrimination."""

__version__ = "0.1.0"

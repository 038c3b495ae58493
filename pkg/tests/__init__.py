"""This is the __init__.py file for the package."""

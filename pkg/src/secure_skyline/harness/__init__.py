"""Roles, datasets, file formats and the command line."""

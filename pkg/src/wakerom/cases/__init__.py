"""Bundled pipeline documents, loaded by name through importlib.resources."""

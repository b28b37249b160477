"""Base classes and helpers for testing tokalign."""

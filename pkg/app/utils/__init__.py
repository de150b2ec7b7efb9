"""Utilities package."""


"""Domain models package."""


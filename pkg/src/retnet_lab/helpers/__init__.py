"""Helper objects for the `retnet_lab` package."""

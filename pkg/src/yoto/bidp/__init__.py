"""Bimanual diffusion policy over keypose actions."""

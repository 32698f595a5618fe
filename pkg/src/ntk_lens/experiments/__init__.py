"""Sweep orchestration, persistence, fitting and plot export."""

"""Closed-form cost comparison against rotation-based schemes."""

from hecnn.cli import main

main(["cost-report"])

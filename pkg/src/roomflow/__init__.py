"""Two-stage booking and check-in control: sampling, policies, benchmarks,
simulation engine, calibration, and a batch experiment CLI."""

__version__ = "0.1.0"

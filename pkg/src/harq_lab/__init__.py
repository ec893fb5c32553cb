"""Analysis and Monte Carlo simulation of truncated Chase-combining HARQ with AMC
over time-correlated Rayleigh fading, with and without a decode-and-forward relay."""

__version__ = "0.1.0"

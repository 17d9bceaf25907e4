"""railsim: offline world-on-rails driving-log simulation and evaluation."""

__version__ = "0.1.0"

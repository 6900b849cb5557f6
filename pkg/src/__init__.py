"""rbrelax - 87Rb ground-state relaxation simulator and analysis toolkit."""

__version__ = "0.1.0"
__author__ = "rbrelax developers"

"""Acoustic covert channel modem driven by hard disk seek noise"""

__app_name__ = "hddmodem"
__version__ = "0.1.0"

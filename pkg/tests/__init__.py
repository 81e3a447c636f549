"""Test package for K3-Qseries-POC."""

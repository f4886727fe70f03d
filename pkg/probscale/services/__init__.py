"""Computational services: sample sizes, order statistics, calibration, kernel pipeline, benchmark"""

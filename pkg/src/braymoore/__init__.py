"""Numerics for annealed log-determinants of conditioned TAP Hessians."""

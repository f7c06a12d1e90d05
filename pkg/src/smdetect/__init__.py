"""Spatial-modulation MIMO detection under imperfect, time-varying CSI."""

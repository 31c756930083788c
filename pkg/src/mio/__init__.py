"""mmWave radar + inertial odometry at desk scale."""

__version__ = "0.1.0"

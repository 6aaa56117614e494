"""Resource- and workload-aware distributed malware detection for simulated
IoT fleets: trace/byte featurization, a small from-scratch CNN, on-device
resource estimation, layer-wise model partitioning, and fleet simulation."""

__version__ = "0.1.0"

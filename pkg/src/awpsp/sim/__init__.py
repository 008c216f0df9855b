"""Round-based federated learning simulation."""

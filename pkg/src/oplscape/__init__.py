"""Off-policy learning objectives, their asymptotic oracles and optimization-landscape probes."""

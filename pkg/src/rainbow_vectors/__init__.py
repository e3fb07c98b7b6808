"""Vehicle detection and velocity vectors from sequential-band satellite imagery."""

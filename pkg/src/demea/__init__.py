"""Deep mesh autoencoder with an embedded deformation layer."""

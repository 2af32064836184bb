"""Two-color QND Faraday measurement and spin squeezing of a Cs ensemble."""

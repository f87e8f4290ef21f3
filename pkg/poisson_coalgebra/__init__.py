# Poisson coalgebra package

"""Spectral compressed sensing via projected gradient descent on factored Hankel matrices."""

"""Numerical laboratory for sparse non-Hermitian random matrices and their Hermitised resolvents."""

"""Dual and primal solvers for confined many-state Choquard problems."""

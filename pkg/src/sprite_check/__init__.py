"""Refinement type checker for a small functional language.

Programs are parsed, normalized, and elaborated into a typed core form;
checking emits Horn constraints over predicate variables, which are solved
by qualifier instantiation and fixpoint weakening against an SMT solver.
"""

__version__ = "0.1.0"

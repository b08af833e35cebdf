"""Mapping toolkit for emerging science and technology fields.

Delineates a field's publication and patent records with boolean title/claims
queries, then builds geographic excellence maps, co-authorship network reports
and overlay maps of science over consecutive time windows.
"""

__version__ = "0.1.0"

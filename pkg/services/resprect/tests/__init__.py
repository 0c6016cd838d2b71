"""
RESPRECT Service tests.
"""

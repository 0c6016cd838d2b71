"""
Services module for RESPRECT.

Baselines and evaluation built on the engines: demonstrations and
demonstration-seeded pretraining, fine-tuning, Reptile, evaluation.
"""

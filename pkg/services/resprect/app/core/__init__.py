"""
Configuration and seed management for RESPRECT Service
"""

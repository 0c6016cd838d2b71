"""
Pydantic schemas for tasks and run logs
"""

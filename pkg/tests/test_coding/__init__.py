"""
Tests for the coding package
"""

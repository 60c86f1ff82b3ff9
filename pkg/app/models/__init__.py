"""Auto-generated"""

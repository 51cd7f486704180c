"""
Grid, field and test-object models
"""

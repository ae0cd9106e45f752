"""
Network repair toolkit package initialization
"""

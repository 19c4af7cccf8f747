"""RankingMatch Studio: desk-scale semi-supervised learning engine"""
__version__ = "1.0.0"

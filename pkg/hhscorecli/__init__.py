"""Command line interface of hhscore."""

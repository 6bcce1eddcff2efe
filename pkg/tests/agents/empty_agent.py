#!/usr/bin/env python3
"""Agent that predicts nothing."""
from pathlib import Path

Path("prediction.txt").write_text("")

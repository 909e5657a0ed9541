# paths.py
from pathlib import Path

# Automatically resolves the project root relative to this file's location
PROJECT_ROOT = Path(__file__).resolve().parent

CONFIG_DIR = PROJECT_ROOT / "assets" / "configs"
DATA_DIR = PROJECT_ROOT / "assets" / "data"

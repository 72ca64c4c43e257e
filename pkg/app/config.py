# -*- coding: utf-8 -*-
"""
Налаштування за замовчуванням зі змінних середовища
"""

import os

# Температура масштабованого апостеріорного розподілу
DEFAULT_PSI = float(os.environ.get("CEDAR_PSI", 100.0))

# Параметри EM
DEFAULT_MAX_ITERS = int(os.environ.get("CEDAR_MAX_ITERS", 500))
DEFAULT_TOL = float(os.environ.get("CEDAR_TOL", 1e-8))

# Проксимальний градієнт
PROX_TOL = float(os.environ.get("CEDAR_PROX_TOL", 1e-10))
PROX_MAX_ITERS = int(os.environ.get("CEDAR_PROX_MAX_ITERS", 20000))

# Паралельне виконання повторень
DEFAULT_WORKERS = int(os.environ.get("CEDAR_WORKERS", 1))

# Монте-Карло для приватності
DEFAULT_MC_REPS = int(os.environ.get("CEDAR_MC_REPS", 100_000))
DEFAULT_MC_REDRAWS = int(os.environ.get("CEDAR_MC_REDRAWS", 20))

# Повторення CEDAR з різними апостеріорними вибірками при порівнянні з OPT
DEFAULT_COMPARE_REPEATS = int(os.environ.get("CEDAR_COMPARE_REPEATS", 100))

DATA_DIR = os.environ.get("CEDAR_DATA_DIR", "data")
LOG_LEVEL = os.environ.get("CEDAR_LOG_LEVEL", "INFO")

# Порт HTTP сервісу (для Render)
PORT = int(os.environ.get("PORT", 8000))
IS_PRODUCTION = bool(os.environ.get("RENDER", False))

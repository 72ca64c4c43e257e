#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Скрипт для запуску HTTP сервісу центрального сайту
"""

import os
import sys

import uvicorn

# Налаштування кодування для Windows (безпечний спосіб)
if sys.platform == "win32":
    try:
        import locale
        locale.setlocale(locale.LC_ALL, 'uk_UA.UTF-8')
    except Exception:
        pass

# Додаємо поточну директорію до Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from app import config  # noqa: E402

if __name__ == "__main__":
    if config.IS_PRODUCTION:
        print("Starting CEDAR central site on Render.com...")
        print(f"Port: {config.PORT}")
        print("Mode: Production")
    else:
        print("Starting CEDAR central site...")
        print(f"Service info: http://localhost:{config.PORT}/")
        print(f"API documentation: http://localhost:{config.PORT}/docs")
        print("Press Ctrl+C to stop the server")

    print("-" * 50)

    uvicorn.run(
        "app.main:app",
        host="0.0.0.0",
        port=config.PORT,
        reload=not config.IS_PRODUCTION,  # Вимкнути reload для продакшену
        log_level="info"
    )

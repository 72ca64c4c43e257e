# -*- coding: utf-8 -*-
"""
CEDAR: розподілена лінійна регресія, де віддалені сайти надсилають лише
OLS оцінку та апостеріорні вибірки, а центральний сайт агрегує їх EM алгоритмом
"""

__version__ = "2.0.0"

# -*- coding: utf-8 -*-
"""
Винятки розподіленого регресійного аналізу
"""

from typing import Iterable, Optional


class CedarError(Exception):
    """Базовий клас для всіх доменних помилок"""


class InvalidConfigError(CedarError):
    """Некоректна конфігурація або параметри"""


class DimensionMismatchError(CedarError):
    """Розмірності сайтів не узгоджуються"""


class RankDeficiencyError(CedarError):
    """Матриця Грама сайту вироджена або не додатно визначена"""

    def __init__(self, site_id: Optional[int], message: str = "Gram matrix is not positive definite"):
        self.site_id = site_id
        where = f"site {site_id}" if site_id is not None else "central site"
        super().__init__(f"{where}: {message}")


class DegeneratePosteriorError(CedarError):
    """Апостеріорний розподіл вироджений (ідеальна підгонка)"""


class NumericalError(CedarError):
    """Чисельна помилка з діагностикою сайту та ітерації"""

    def __init__(self, message: str, site_id: Optional[int] = None, iteration: Optional[int] = None):
        self.site_id = site_id
        self.iteration = iteration
        context = []
        if iteration is not None:
            context.append(f"iteration {iteration}")
        if site_id is not None:
            context.append(f"site {site_id}")
        prefix = f"[{', '.join(context)}] " if context else ""
        super().__init__(prefix + message)


class LineSearchError(CedarError):
    """Крок backtracking зменшився до нуля"""


class PayloadDecodeError(CedarError):
    """Пошкоджене або несумісне повідомлення сайту"""

    def __init__(self, message: str, site_id: Optional[int] = None):
        self.site_id = site_id
        prefix = f"site {site_id}: " if site_id is not None else ""
        super().__init__(prefix + message)


class IncompleteRoundError(CedarError):
    """Не всі сайти відповіли в раунді"""

    def __init__(self, round_id: int, missing: Iterable[int]):
        self.round_id = round_id
        self.missing = sorted(missing)
        super().__init__(f"round {round_id} incomplete, no response from sites {self.missing}")


class ResolutionError(CedarError):
    """Замало Монте-Карло повторень для квантиля рівня delta"""


class EstimatorUnavailableError(CedarError):
    """Оцінка недоступна через брак інформації (наприклад K=0)"""


class DataFileError(CedarError):
    """Помилка читання CSV файлу сайту"""

    def __init__(self, path: str, message: str, row: Optional[int] = None):
        self.path = path
        self.row = row
        where = f"{path}, row {row}" if row is not None else path
        super().__init__(f"{where}: {message}")

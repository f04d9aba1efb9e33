# -*- coding: utf-8 -*-
"""Ambient settings

Numerical tolerances, default seeds and output locations are read once from ``default.ini`` and may be overridden
by a ``config.ini`` in the working directory. Experiment descriptions are JSON and live elsewhere (see ``cli``).
"""
import configparser

from .utilities.utils import resource_path, str2list

config = configparser.ConfigParser()  # pylint: disable=invalid-name
config.read([resource_path("default.ini"), "config.ini"])


def numeric(key: str, fallback: float) -> float:
    """ Float from the [Numerics] section. """
    return config.getfloat("Numerics", key, fallback=fallback)


def verify_setting(key: str, fallback: float) -> float:
    return config.getfloat("Verify", key, fallback=fallback)


def run_setting(key: str, fallback):
    if isinstance(fallback, int):
        return config.getint("Run", key, fallback=fallback)
    return config.get("Run", key, fallback=fallback)


def list_setting(section: str, key: str, type_func=float, fallback=None):
    """ Bracketed list entries such as ``levels = [25, 50, 100]``. """
    if not config.has_option(section, key):
        return fallback
    return str2list(config[section][key], type_func)

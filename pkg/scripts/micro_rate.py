"""Run the micro study in configs/micro.cfg and write CSV + SVG."""

from _common import run_config

if __name__ == "__main__":
    run_config("micro", "micro-study", "micro")

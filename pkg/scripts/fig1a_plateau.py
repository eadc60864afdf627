"""Run the plateau study in configs/plateau.cfg and write CSV + SVG."""

from _common import run_config

if __name__ == "__main__":
    run_config("plateau", "plateau-study", "plateau")

"""Run the space study in configs/paper_fig1a.cfg and write CSV + SVG."""

from _common import run_config

if __name__ == "__main__":
    run_config("paper_fig1a", "space-study", "space")

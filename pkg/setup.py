import sys

sys.setrecursionlimit(sys.getrecursionlimit() * 5)

from cx_Freeze import setup, Executable

setup(
    name="bayesg",
    version="1.0",
    description="Сетевое многоагентное обучение с латентным эго-графом и симулятором исполнения",
    options={
        "build_exe": {
            "packages": ["numpy", "pandas", "openpyxl", "reportlab", "networkx", "simpy", "tqdm", "tomli_w"],
            "include_files": [("configs", "configs")],
        }
    },
    executables=[
        Executable(
            "main.py",
            target_name="bayesg.exe" if sys.platform == "win32" else "bayesg",
            base=None,
        )
    ]
)

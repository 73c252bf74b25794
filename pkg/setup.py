# setup.py
import argparse
import subprocess
import sys
from pathlib import Path


def print_header():
    """Print setup header"""
    print("=" * 60)
    print("         FilamentFlow - workspace setup")
    print("=" * 60)
    print()


def check_python_version():
    """Check if Python version is compatible"""
    print("Checking Python version...")
    if sys.version_info < (3, 9):
        print("Error: Python 3.9 or higher is required")
        sys.exit(1)
    print(f"Python {sys.version_info.major}.{sys.version_info.minor} detected")


def create_directories():
    """Create output and log directories"""
    for directory in ('runs', 'logs', 'configs'):
        Path(directory).mkdir(exist_ok=True)
        print(f"   Created: {directory}/")


def setup_environment():
    """Write a default .env file"""
    env_template = """# FilamentFlow environment
# development | production | testing
FILAMENT_ENV=development
# error | info | debug
FILAMENT_LOG=info
"""
    env_file = Path('.env')
    if not env_file.exists():
        env_file.write_text(env_template)
        print("Created .env with default configuration")
    else:
        print(".env already exists")


def write_example_config():
    """Write an example run config in the flat key=value format"""
    example = """# Brownian loop, short rough-regime evolution
loop.kind = brownian
loop.N_fine = 4096
loop.N = 128
loop.seed = 7
kernel.gamma_intensity = 12.566370614359172
kernel.mu = 1.0
evolve.dt = 0.01
evolve.t_end = 0.1
evolve.scheme = heun
evolve.gamma = 0.4
output.dir = runs/example
run.threads = 4
"""
    path = Path('configs') / 'example.cfg'
    if not path.exists():
        path.write_text(example)
        print(f"Wrote {path}")


def install_dependencies():
    """Install Python dependencies"""
    print("Installing Python dependencies...")
    try:
        subprocess.check_call([sys.executable, '-m', 'pip', 'install', '-r', 'requirements.txt'])
    except subprocess.CalledProcessError as e:
        print(f"Error installing dependencies: {e}")
        sys.exit(1)


def main():
    parser = argparse.ArgumentParser(description='FilamentFlow setup')
    parser.add_argument('--install', action='store_true', help='pip install requirements.txt')
    args = parser.parse_args()

    print_header()
    check_python_version()
    if args.install:
        install_dependencies()
    create_directories()
    setup_environment()
    write_example_config()
    print("\nSetup complete. Try: python run.py generate --config configs/example.cfg")


if __name__ == '__main__':
    main()

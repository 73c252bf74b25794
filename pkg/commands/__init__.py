# commands/__init__.py
from commands.converge import cmd_converge
from commands.diagnose import cmd_diagnose
from commands.evolve import cmd_evolve
from commands.generate import cmd_generate

COMMANDS = {
    'generate': cmd_generate,
    'evolve': cmd_evolve,
    'diagnose': cmd_diagnose,
    'converge': cmd_converge
}

__all__ = ['COMMANDS', 'cmd_converge', 'cmd_diagnose', 'cmd_evolve', 'cmd_generate']

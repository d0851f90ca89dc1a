from .errors import KinetrackError

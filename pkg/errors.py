class ScenarioPruneError(Exception):
    '''
    Base class for every error raised by this repository.
    '''


class InputError(ScenarioPruneError, ValueError):
    '''
    Bad arguments: shape or length mismatches, non-finite values, empty subsets,
    parameters outside their allowed range.
    '''


class NumericalError(ScenarioPruneError, ArithmeticError):
    '''
    A computation produced something that cannot be trusted, e.g. a Gram matrix
    that is not positive semidefinite or a trajectory that blew up.
    scenario and step are filled in when the failure can be pinned to one rollout.
    '''
    def __init__(self, message, scenario=None, step=None):
        super().__init__(message)
        self.scenario = scenario
        self.step = step


class ConfigError(InputError):
    '''
    Experiment config does not match the schema. field is the dotted path
    of the offending key (e.g. "kernel.bandwidth").
    '''
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(InputError):
    '''
    Scenario CSV could not be read into an N x d matrix. line is 1-based.
    '''
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line

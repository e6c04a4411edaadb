"""Exception types raised across the package."""


class NonstatRLError(Exception):
    """Base class for package errors."""


class InvalidSnapshotError(NonstatRLError, ValueError):
    """An MDP snapshot violates its invariants.

    The full :class:`~nonstat_rl.mdp.ValidationReport` is kept on ``report``.
    """

    def __init__(self, report):
        self.report = report
        lines = [str(v) for v in report.violations[:10]]
        more = len(report.violations) - len(lines)
        if more > 0:
            lines.append(f"... and {more} more")
        super().__init__("invalid MDP snapshot:\n  " + "\n  ".join(lines))


class IncompatibleShapesError(NonstatRLError, ValueError):
    pass


class NotCommunicatingError(NonstatRLError, ValueError):
    pass


class SingularSystemError(NonstatRLError, ArithmeticError):
    """The policy evaluation system is rank deficient (multichain policy)."""


class NonConvergenceError(NonstatRLError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``last_span`` holds the stopping statistic at the final iterate.
    """

    def __init__(self, message, iterations=None, last_span=None):
        self.iterations = iterations
        self.last_span = last_span
        if last_span is not None:
            message = f"{message} (iterations={iterations}, last span={last_span:.3e})"
        super().__init__(message)


class InfeasibleBoxError(NonstatRLError, AssertionError):
    """A transition box cannot carry a probability distribution.

    Clipping in :func:`~nonstat_rl.evi.build_confidence` should make this
    unreachable, so seeing it points at a bug upstream.
    """


class ProtocolError(NonstatRLError, RuntimeError):
    """The act/observe alternation of an agent was broken."""


class RunError(NonstatRLError, RuntimeError):
    """A simulation aborted; carries the step, episode and phase indices."""

    def __init__(self, message, t=None, episode=None, phase=None):
        self.t = t
        self.episode = episode
        self.phase = phase
        super().__init__(f"{message} [t={t}, episode={episode}, phase={phase}]")

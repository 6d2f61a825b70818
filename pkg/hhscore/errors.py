# =============================================================================
# This file is part of hhscore.
#
# hhscore is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 2 of the License, or
# (at your option) any later version.
#
# hhscore is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with hhscore.  If not, see <http://www.gnu.org/licenses/>.
# =============================================================================

"""Various errors the library can generate."""


class HHScoreError(Exception):
    """Base hhscore error."""


class VectorError(HHScoreError):
    """Failed to perform an operation on an embedding vector."""


class NormalizationError(VectorError):
    """Vector has zero (or non-finite) norm and can't be normalized."""


class DimensionError(VectorError):
    """Vector or matrix dimensions don't agree."""


class EmptyInputError(HHScoreError):
    """An operation needing at least one item got none."""


class NotFoundError(HHScoreError):
    """Speaker or utterance id was not found."""


class DuplicateUtteranceError(HHScoreError):
    """Utterance id already exists for that speaker."""


class ConfigError(HHScoreError):
    """Invalid configuration."""


class ConfigItemNotFoundError(ConfigError):
    """No such configuration key."""


class ConfigValueError(ConfigError):
    """Unexpected or improper value for a configuration key."""


class HouseholdError(HHScoreError):
    """Failed to build or use a household."""


class DegenerateHouseholdError(HouseholdError):
    """Household yields no positive or no negative training pairs."""


class SpeakerTooSmallError(HouseholdError):
    """Speaker doesn't have enough utterances for the enroll/eval splits."""

    def __init__(self, speaker_id, available, required):
        super().__init__(
            "speaker %r has %d utterances, %d required" % (speaker_id, available, required)
        )
        self.speaker_id = speaker_id
        self.available = available
        self.required = required

    def __reduce__(self):
        return self.__class__, (self.speaker_id, self.available, self.required)


class GuestPoolEmptyError(HouseholdError):
    """No utterances left outside the household to sample guests from."""


class CliqueSearchError(HouseholdError):
    """Couldn't find enough hard households within the search budget."""

    def __init__(self, achieved, requested, attempts):
        super().__init__(
            "found %d of %d hard households after %d attempts"
            % (achieved, requested, attempts)
        )
        self.achieved = achieved
        self.requested = requested
        self.attempts = attempts

    def __reduce__(self):
        return self.__class__, (self.achieved, self.requested, self.attempts)


class NumericalError(HHScoreError):
    """Non-finite value came up during training."""

    def __init__(self, message, epoch=None):
        self.message = message
        self.epoch = epoch
        if epoch is not None:
            message = "epoch %d: %s" % (epoch, message)
        super().__init__(message)

    def __reduce__(self):
        return self.__class__, (self.message, self.epoch)


class TrialSetError(HHScoreError):
    """Failed to compute error rates on a set of trials."""


class DegenerateTrialSetError(TrialSetError):
    """Trial set lacks guest trials or enrolled trials."""


class FormatError(HHScoreError):
    """Error while reading or writing a file format."""


class MagicError(FormatError):
    """File doesn't start with the expected magic tag."""


class FormatVersionError(FormatError):
    """Unsupported file format version."""


class ExperimentError(HHScoreError):
    """Error raised while processing one household of an experiment."""

    def __init__(self, module, household, cause):
        super().__init__("%s: household %s: %s" % (module, household, cause))
        self.module = module
        self.household = household
        self.cause = cause

    # the cause travels as its message so results pickle across workers
    def __reduce__(self):
        return self.__class__, (self.module, self.household, str(self.cause))

"""
Experiment Mode Router

Routes a validated experiment config to the feature that runs its mode.
Features declare the modes they handle; registration order decides which
feature wins when two claim the same mode.
"""

import logging

logger = logging.getLogger(__name__)


class ModeRouter:
    """
    Routes experiment modes to features.
    """

    def __init__(self):
        self.features = []

    def register_feature(self, feature):
        """
        Register a feature with the router.

        Args:
            feature: Feature instance with name, description, modes and capabilities
        """
        self.features.append(feature)
        logger.debug("Registered feature %s for modes %s", feature.name, ', '.join(feature.modes))

    def route(self, mode):
        """
        Find the feature that handles a mode.

        Args:
            mode (str): experiment mode from the config

        Returns:
            Feature instance or None if no feature handles the mode
        """
        for feature in self.features:
            if mode in feature.modes:
                logger.info("Mode %s routed to %s", mode, feature.name)
                return feature
        logger.warning("No feature handles mode %s", mode)
        return None

    @property
    def modes(self):
        return tuple(mode for feature in self.features for mode in feature.modes)

    def get_feature_summary(self):
        """
        Get a summary of all registered features for display.

        Returns:
            str: one line per feature
        """
        if not self.features:
            return "No features available"

        summary = []
        for feature in self.features:
            summary.append(f"- {feature.name} [{', '.join(feature.modes)}]: {feature.description}")

        return "\n".join(summary)

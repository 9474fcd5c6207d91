"""
Features module for the experiment runner.

Each feature runs one or more experiment modes. A feature has a name, a
description, the tuple of modes it handles, get_capabilities(), and an async
handle(cfg, context) that returns a ModeResult.
"""

"""echoguide: a deterministic simulator of an ultrasonic obstacle-alert
wearable, its handset app, and the location-tracking service behind it."""

__version__ = "0.1.0"

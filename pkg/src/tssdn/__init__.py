"""Discrete-event simulation of time-sensitive networks under centralized
(SDN) control: slot placement and latency bounds, transactional schedule
updates, security-domain separation and attack replay."""

__version__ = "0.1.0"

"""SDN testbed for DNS-blacklist based ransomware mitigation."""

__version__ = "0.1.0"

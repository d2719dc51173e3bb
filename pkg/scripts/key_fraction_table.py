"""Key fraction at the three measurement settings over a range of assumed v_el.

The electronic noise of the original receivers is not published, so each
setting is evaluated for v_el from 0.05 to 0.3 SNU, trusted and untrusted.
"""

import numpy as np

from cvqkd_sync.channel_sim import fiber_transmittance
from cvqkd_sync.param_est import SecurityParams, secret_key_fraction

SETTINGS = {  # name: (nbar, length km, detector efficiency, excess noise mPNU)
    "20 km, shared clock": (1.45, 20, 0.69, 4.5),
    "20 km, free-running": (1.45, 20, 0.69, 4.0),
    "10 km, free-running": (3.5, 10, 0.5, 2.4),
}


def main():
    v_els = np.linspace(0.05, 0.3, 6)
    print("setting".ljust(22) + "".join(f"v_el={v:.2f}".rjust(11) for v in v_els))
    for name, (nbar, km, eta, eps) in SETTINGS.items():
        for trusted in (True, False):
            row = [
                secret_key_fraction(
                    2 * nbar,
                    fiber_transmittance(km),
                    eps * 1e-3,
                    SecurityParams(detector_efficiency=eta, electronic_noise=v, trusted_receiver=trusted),
                )
                for v in v_els
            ]
            label = f"{name} ({'trusted' if trusted else 'untrusted'})"
            print(label.ljust(34)[:34] + "".join(f"{k:11.4f}" for k in row))


if __name__ == "__main__":
    main()

"""Small scenario builders shared by the simulation tests."""

from teerollup import config


def small(seed=1, n=4, f=1, clients=6, transfers=12, batch=8, depth=16, **sections):
    data = {
        "name": f"small-{seed}",
        "seed": seed,
        "max_time": 120.0,
        "tree_depth": depth,
        "committee": {"n": n, "f": f, "batch_size": batch, "stagger": 1.0, "max_batch_wait": 0.5},
        "chain": {"block_delay": 2.0, "challenge_timeout": 40.0},
        "dap": {"m": 2, "collateral": 1000, "min_collateral": 1000},
        "workload": {"clients": clients, "deposit_value": 100, "transfers": transfers,
                     "transfer_start": 3.0, "rate": 20.0},
    }
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return config.from_dict(data)

# scripts/generate_inductance_table.py
import argparse

from app.models.coupling import SyntheticTableParams
from app.services.coupling_service import save_table_csv, synth_table, validate_table


def generate_inductance_table(path: str, n_points: int, span: float, mutual: float):
    params = SyntheticTableParams(n_points=n_points, coupled_span=span, M1=mutual, M2=mutual)
    table = synth_table(params)
    validate_table(table)
    save_table_csv(table, path)
    print(f"Wrote {len(table)} rows over {span} m to {path}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Write the synthetic transit inductance table")
    parser.add_argument("path", nargs="?", default="scenarios/inductance_table.csv")
    parser.add_argument("--points", type=int, default=26)
    parser.add_argument("--span", type=float, default=2.0)
    parser.add_argument("--mutual", type=float, default=40e-6)
    args = parser.parse_args()
    generate_inductance_table(args.path, args.points, args.span, args.mutual)

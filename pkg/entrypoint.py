import sys

from mfsde_pipeline.process import STUDIES, autoprocess, cli, load_run_config

if __name__ == "__main__":
    if sys.argv[1] == "run":
        cli.main()
    elif sys.argv[1] == "all":
        # every study of one example into <out>/<study>
        example = int(sys.argv[2]) if len(sys.argv) > 2 else 1
        preset = sys.argv[3] if len(sys.argv) > 3 else "quick"
        out = sys.argv[4] if len(sys.argv) > 4 else "results"
        for study in STUDIES:
            cfg = load_run_config(
                study=study,
                example=example,
                preset=preset,
                out="{}/example{}/{}".format(out, example, study),
            )
            autoprocess.run(cfg)
    else:
        raise ValueError(
            f"Usage error! Unknown argument {sys.argv[1]}. Accepting: run|all"
        )

"""Where the parameters of the default model live, and what the ablations remove."""

from plantvit.model import build_model, count_parameters, summary

model = build_model()
info = summary(model)
print(f"default model: {info['total_params']:,} parameters, {info['num_tokens']} tokens of width {info['embed_dim']}")
for row in info["rows"]:
    shape = "x".join(map(str, row["output_shape"]))
    print(f"  {row['module']:<12} {shape:>12} {row['params']:>9,}")

print("\nablation lattice (CBAM on/off x stage formation):")
for cbam in (True, False):
    for formation in ((1, 2, 4), (1, 1, 1)):
        total, _ = count_parameters(build_model(cbam_enabled=cbam, stage_formation=formation))
        print(f"  cbam={str(cbam):<5} formation={'-'.join(map(str, formation))}  {total:>9,}")

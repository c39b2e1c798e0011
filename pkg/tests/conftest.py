from sg2scene.config import TrainConfig

# Small widths so end-to-end runs take a second or two on one CPU.
TINY = TrainConfig(
    steps=3,
    lr=1e-3,
    scenes_per_step=2,
    shapes_per_step=4,
    checkpoint_every=0,
    text_dim=32,
    embed_dim=8,
    box_dim=8,
    latent_dim=8,
    gcn_hidden=16,
    gcn_layers=2,
    relation_dim=8,
    tsdf_resolution=8,
    vq_downsample=2,
    vq_channels=2,
    vq_codebook=8,
    vq_hidden=4,
    vq_steps=5,
    diffusion_steps=4,
    unet_channels=8,
)


# One "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed in the
# terminal summary so it survives output capturing.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

"""Writes small TorchScript codecs used by the external-backbone tests."""
import sys

import torch


class Codec(torch.nn.Module):
    def __init__(self, latent_channels: int, factor: int):
        super().__init__()
        self.factor = factor
        self.enc = torch.nn.Conv2d(3, latent_channels, 1)
        self.dec = torch.nn.Conv2d(latent_channels, 3, 1)

    @torch.jit.export
    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.enc(torch.nn.functional.avg_pool2d(x, self.factor))

    @torch.jit.export
    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.dec(torch.nn.functional.interpolate(z, scale_factor=float(self.factor), mode="nearest"))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def main(out_dir: str) -> None:
    torch.manual_seed(0)
    torch.jit.script(Codec(4, 4)).save(f"{out_dir}/codec_f4_c4.pt")
    torch.jit.script(Codec(3, 4)).save(f"{out_dir}/codec_f4_c3.pt")
    torch.jit.script(Codec(4, 2)).save(f"{out_dir}/codec_f2_c4.pt")


if __name__ == "__main__":
    main(sys.argv[1])

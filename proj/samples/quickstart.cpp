// Generates a small synthetic dataset, pretrains a tiny patch Transformer
// for a few epochs and compares linear-probe accuracy before and after.
//
//   sample_quickstart [output-dir]

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "pma2e/pma2e.hpp"

int main(int argc, char** argv) {
  using namespace pma2e;
  const std::string dir = argc > 1 ? argv[1] : (std::filesystem::temp_directory_path() / "pma2e_quickstart").string();

  SynthSpec synth;
  synth.per_family = 10;
  synth.points = 128;
  synth.seed = 1;
  const auto manifest = synth_generate(synth, dir);

  TrainConfig cfg = parse_train_config(
      "points = 128\n"
      "epochs = 5\n"
      "dim = 32\n"
      "encoder_depth = 2\n"
      "decoder_depth = 1\n"
      "patches = 8\n"
      "patch_size = 16\n"
      "seed = 1\n");
  const auto train = load_split(manifest, "train", cfg.model.points, cfg.seed);

  Pretrainer<float> trainer(cfg);
  const Checkpoint initial = trainer.checkpoint();
  const auto result = trainer.run(train, [](const EpochMetrics& m) { std::cout << metrics_line(m); });

  for (const auto* ck : {&initial, &result.checkpoint}) {
    const auto probe = probe_sweep(extract_features(*ck, manifest, "train"), extract_features(*ck, manifest, "test"));
    std::printf("epochs=%llu probe accuracy=%.3f\n", static_cast<unsigned long long>(ck->epoch), probe.accuracy);
  }
}

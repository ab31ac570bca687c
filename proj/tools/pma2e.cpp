// pma2e: synthesize data, corrupt clouds, pretrain, probe, run few-shot
// episodes and export reconstructions.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pma2e/pma2e.hpp"

namespace {

using namespace pma2e;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfigError = 3,
  kIoError = 4,
  kFormatError = 5,
  kDegenerateMask = 6,
  kDiverged = 7,
  kVersionError = 8,
  kInvalidArgument = 9,
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return kConfigError;
    case ErrorKind::Io: return kIoError;
    case ErrorKind::Format: return kFormatError;
    case ErrorKind::DegenerateMask: return kDegenerateMask;
    case ErrorKind::Divergence: return kDiverged;
    case ErrorKind::Version: return kVersionError;
    case ErrorKind::InvalidArgument:
    case ErrorKind::Shape: return kInvalidArgument;
  }
  return kFailure;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << "error kind=" << kind << " message=\"" << one_line(message) << "\"\n";
}

/// Output paths are always built from --out plus a fixed file name.
std::string out_path(const std::string& out, const std::string& name) {
  return (fs::path(out) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + path);
  f << text;
}

void echo(const std::string& title, const std::string& resolved) {
  std::cout << "# resolved " << title << "\n" << resolved << std::flush;
}

struct Options {
  std::string out;
  std::string config;
  std::string manifest;
  std::string checkpoint;
  std::string input;
  std::string affine_spec;
  std::string resume;
  std::string format = "xyz";
  std::vector<std::string> sets;
  std::map<std::string, std::string> overrides;
  bool init_only = false;
  std::size_t stop_after = 0;
  bool save_features = false;

  // synth
  std::string families = "sphere,cube,cylinder,torus";
  std::size_t per_family = 20;
  std::size_t synth_points = 256;
  double jitter = 0.0;
  double variation = 0.0;
  double test_fraction = 0.2;
  bool random_pose = false;

  // probe / fewshot
  std::vector<double> cs{0.1, 1.0, 10.0};
  std::string split = "all";
  EpisodeSpec episode;
  std::size_t index = 0;
};

/// Flag that overrides one config key.
void key_flag(CLI::App* app, Options& o, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&o, key](const std::string& v) { o.overrides[key] = v; }, help);
}

void corruption_flags(CLI::App* app, Options& o) {
  key_flag(app, o, "--mask", "mask", "Masking strategy: random|fixed|view|patch|none");
  key_flag(app, o, "--alpha", "alpha", "Masking ratio in (0,1) (default 0.6)");
  key_flag(app, o, "--affine", "affine",
           "Affine sub-families: full|none or a comma list of rotate,translate,reflect,shear,scale (default full)");
  key_flag(app, o, "--cluster-size", "cluster_size", "Cluster size for --mask fixed (default 32)");
  key_flag(app, o, "--kappa-max", "kappa_max", "Largest cluster count for --mask random (default 8)");
  key_flag(app, o, "--patches", "patches", "Patch count n (default 16)");
  key_flag(app, o, "--patch-size", "patch_size", "Points per patch k (default 16)");
  app->add_option("--affine-spec", o.affine_spec, "Key-value file with affine ranges and enabled families");
}

void model_flags(CLI::App* app, Options& o) {
  key_flag(app, o, "--encoder", "encoder", "Encoder: transformer|pointnet (default transformer)");
  key_flag(app, o, "--objective", "objective", "Objective: decomposed|whole|local-only|global-only");
  key_flag(app, o, "--affine-role", "affine_role", "Role of the affine: corruption|augmentation");
  key_flag(app, o, "--local-decoder", "local_decoder", "Masked-patch head: fc|fold (default fold)");
  key_flag(app, o, "--global-decoder", "global_decoder", "Center head: fc|fold (default fc)");
  key_flag(app, o, "--decoder", "decoder", "Whole-cloud head of the pointnet autoencoder: fc|fold (default fc)");
  key_flag(app, o, "--points", "points", "Points per cloud (default 1024)");
  key_flag(app, o, "--epochs", "epochs", "Training epochs (default 300)");
  key_flag(app, o, "--lr", "lr", "Peak learning rate (default 0.001)");
  key_flag(app, o, "--batch-size", "batch_size", "Samples per optimizer step (default 8)");
  key_flag(app, o, "--lambda", "lambda", "Weight of the center loss (default 1)");
  key_flag(app, o, "--precision", "precision", "Arithmetic: float|double (default float)");
  key_flag(app, o, "--dim", "dim", "Token width d (default 64)");
}

/// Config file first, then --set entries, then dedicated flags.
TrainConfig resolve_config(const Options& o) {
  TrainConfig cfg;
  KeyValues kv;
  if (!o.config.empty()) kv = read_key_values(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos, ErrorKind::Config, "--set expects key=value, got '" + s + "'");
    kv[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
  }
  for (const auto& [k, v] : o.overrides) kv[k] = v;
  apply_config(cfg, kv);
  if (!o.affine_spec.empty()) {
    const auto spec = read_affine_spec(o.affine_spec);
    const auto enabled = kv.count("affine") ? cfg.affine.enabled : spec.enabled;
    cfg.affine = spec;
    cfg.affine.enabled = enabled;
  }
  return cfg;
}

std::string seed_key(const CLI::App* app) { return app->count("--seed") ? "seed" : ""; }

// ---------------------------------------------------------------------------

int run_synth(const Options& o, std::uint64_t seed) {
  SynthSpec spec;
  spec.families = split(o.families, ',');
  spec.per_family = o.per_family;
  spec.points = o.synth_points;
  spec.jitter = o.jitter;
  spec.variation = o.variation;
  spec.test_fraction = o.test_fraction;
  spec.random_pose = o.random_pose;
  spec.seed = seed;
  std::ostringstream os;
  os << "families = " << o.families << "\nper_family = " << spec.per_family << "\npoints = " << spec.points
     << "\njitter = " << format_double(spec.jitter) << "\nvariation = " << format_double(spec.variation)
     << "\ntest_fraction = " << format_double(spec.test_fraction) << "\nrandom_pose = " << spec.random_pose
     << "\nseed = " << seed << "\nout = " << o.out << "\n";
  echo("synth", os.str());
  const auto m = synth_generate(spec, o.out);
  std::cout << "wrote " << m.entries.size() << " clouds and " << out_path(o.out, "manifest.tsv") << "\n";
  return kOk;
}

int run_corrupt(const Options& o) {
  const auto cfg = resolve_config(o);
  cfg.affine.validate();
  echo("corrupt", cfg.to_text() + "input = " + o.input + "\nout = " + o.out + "\n");
  const PointCloud cloud = read_cloud(o.input);
  Rng rng(cfg.seed);
  const auto t = sample_affine(cfg.affine, rng);
  const PointCloud transformed = affine_apply(cloud, t);
  PointCloud corrupted = transformed;
  std::size_t masked = 0;
  if (cfg.mask == MaskKind::Patch) {
    const auto& tc = cfg.model.transformer;
    require(tc.patches <= cloud.size() && tc.patch_size <= cloud.size(), ErrorKind::Config,
            "patches and patch_size must not exceed the cloud size");
    Rng prng(derive_seed(cfg.seed, 1));
    const PatchSet ps = patchify(transformed, tc.patches, tc.patch_size, prng);
    const auto plan = mask_patches(tc.patches, cfg.alpha, rng);
    std::vector<Vec3> pts;
    for (auto r : plan.visible)
      for (std::size_t j = 0; j < ps.k; ++j) pts.push_back(ps.point(r, j));
    corrupted = PointCloud(std::move(pts));
    masked = plan.masked.size();
  } else {
    auto mc = mask_cloud(transformed, cfg, rng);
    masked = mc.plan.masked.size();
    corrupted = std::move(mc.visible);
  }
  fs::create_directories(o.out);
  const std::string name = "corrupted." + std::string(o.format == "ply" ? "ply" : "xyz");
  write_cloud(out_path(o.out, name), corrupted);
  std::cout << "input_points=" << cloud.size() << " masked=" << masked << " output_points=" << corrupted.size()
            << " file=" << out_path(o.out, name) << "\n";
  return kOk;
}

template <typename T>
int pretrain_with(const TrainConfig& cfg, const Options& o, const std::vector<PointCloud>& data) {
  std::optional<Pretrainer<T>> trainer;
  if (o.resume.empty())
    trainer.emplace(cfg);
  else
    trainer.emplace(cfg, load_checkpoint(o.resume));
  if (o.init_only) {
    save_checkpoint(trainer->checkpoint(), out_path(o.out, "checkpoint.bin"));
    std::cout << "wrote initial checkpoint " << out_path(o.out, "checkpoint.bin") << "\n";
    return kOk;
  }
  const std::string metrics_file = out_path(o.out, "metrics.csv");
  std::ofstream metrics(metrics_file, std::ios::binary);
  require(static_cast<bool>(metrics), ErrorKind::Io, "cannot write " + metrics_file);
  metrics << metrics_header();
  const auto result = trainer->run(data, [&](const EpochMetrics& m) {
    metrics << metrics_line(m);
    metrics.flush();
  }, o.stop_after);
  save_checkpoint(result.checkpoint, out_path(o.out, "checkpoint.bin"));
  if (result.diverged) fail(ErrorKind::Divergence, result.message + "; last finite checkpoint saved");
  if (!result.metrics.empty()) std::cout << "final " << metrics_line(result.metrics.back());
  std::cout << "wrote " << metrics_file << " and " << out_path(o.out, "checkpoint.bin") << "\n";
  return kOk;
}

int run_pretrain(const Options& o) {
  const auto cfg = resolve_config(o);
  cfg.validate();
  const auto text = cfg.to_text();
  echo("config", text);
  const auto manifest = load_manifest(o.manifest);
  const auto data = load_split(manifest, "train", cfg.model.points, cfg.seed);
  require(!data.empty(), ErrorKind::InvalidArgument, o.manifest + ": no train entries");
  fs::create_directories(o.out);
  write_text(out_path(o.out, "config.txt"), text);
  return cfg.precision == Precision::Double ? pretrain_with<double>(cfg, o, data) : pretrain_with<float>(cfg, o, data);
}

int run_probe(const Options& o) {
  const auto ck = load_checkpoint(o.checkpoint);
  const auto cfg = checkpoint_config(ck);
  std::ostringstream os;
  os << "checkpoint = " << o.checkpoint << "\nmanifest = " << o.manifest << "\nregularization =";
  for (double c : o.cs) os << ' ' << format_double(c);
  os << "\nout = " << o.out << "\n" << cfg.to_text();
  echo("probe", os.str());
  const auto manifest = load_manifest(o.manifest);
  const auto train = extract_features(ck, manifest, "train");
  const auto test = extract_features(ck, manifest, "test");
  fs::create_directories(o.out);
  if (o.save_features) {
    write_feature_csv(out_path(o.out, "features_train.csv"), train);
    write_feature_csv(out_path(o.out, "features_test.csv"), test);
  }
  const auto r = probe_sweep(train, test, o.cs);
  std::ostringstream rep;
  rep << "accuracy = " << format_double(r.accuracy) << "\nchosen_c = " << format_double(r.chosen_c)
      << "\nepochs_trained = " << ck.epoch << "\nfeature_dim = " << train.dim() << "\ntrain_samples = " << train.size()
      << "\ntest_samples = " << test.size() << "\n";
  for (const auto& [c, acc] : r.validation) rep << "validation_c_" << format_double(c) << " = " << format_double(acc) << "\n";
  write_text(out_path(o.out, "probe.txt"), rep.str());
  std::cout << rep.str();
  return kOk;
}

int run_fewshot(const Options& o, std::uint64_t seed) {
  const auto ck = load_checkpoint(o.checkpoint);
  EpisodeSpec spec = o.episode;
  spec.seed = seed;
  spec.validate();
  std::ostringstream os;
  os << "checkpoint = " << o.checkpoint << "\nmanifest = " << o.manifest << "\nsplit = " << o.split
     << "\nways = " << spec.ways << "\nshots = " << spec.shots << "\nqueries = " << spec.queries
     << "\nrepetitions = " << spec.repetitions << "\nregularization = " << format_double(spec.c) << "\nseed = " << seed
     << "\nout = " << o.out << "\n";
  echo("fewshot", os.str());
  const auto manifest = load_manifest(o.manifest);
  FeatureTable table;
  for (const char* s : {"train", "val", "test"}) {
    if (o.split != "all" && o.split != s) continue;
    if (manifest.split(s).empty()) continue;
    const auto part = extract_features(ck, manifest, s);
    for (std::size_t i = 0; i < part.size(); ++i) table.add(part.ids[i], part.labels[i], part.rows[i]);
  }
  require(table.size() > 0, ErrorKind::InvalidArgument, "no samples in split '" + o.split + "'");
  const auto r = fewshot_eval(table, spec);
  std::ostringstream rep;
  rep << "mean = " << format_double(r.mean) << "\nstd = " << format_double(r.std) << "\naccuracies =";
  for (double a : r.accuracies) rep << ' ' << format_double(a);
  rep << "\n";
  fs::create_directories(o.out);
  write_text(out_path(o.out, "fewshot.txt"), rep.str());
  std::cout << rep.str();
  return kOk;
}

int run_reconstruct(const Options& o, std::uint64_t seed) {
  const auto ck = load_checkpoint(o.checkpoint);
  const auto cfg = checkpoint_config(ck);
  std::ostringstream os;
  os << "checkpoint = " << o.checkpoint << "\ninput = " << o.input << "\nseed = " << seed << "\nout = " << o.out << "\n";
  echo("reconstruct", os.str());
  const PointCloud cloud = normalize_unit_sphere(resample(read_cloud(o.input), cfg.model.points, seed));
  const auto files = reconstruct_export(ck, cloud, o.out, seed);
  std::cout << "clean=" << files.clean.size() << " corrupted=" << files.corrupted.size()
            << " reconstruction=" << files.reconstruction.size() << " out=" << o.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked affine autoencoder pretraining for point clouds"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic shape dataset");
  synth->add_option("--out", o.out, "Output directory")->required();
  synth->add_option("--seed", seed, "Random seed")->default_val(0);
  synth->add_option("--families", o.families, "Comma-separated families")->default_val(o.families);
  synth->add_option("--per-family", o.per_family, "Clouds per family")->default_val(o.per_family);
  synth->add_option("--points", o.synth_points, "Points per cloud")->default_val(o.synth_points);
  synth->add_option("--jitter", o.jitter, "Gaussian jitter sigma")->default_val(o.jitter);
  synth->add_option("--variation", o.variation, "Random proportion variation in [0,1)")->default_val(o.variation);
  synth->add_option("--test-fraction", o.test_fraction, "Fraction of each family in the test split")
      ->default_val(o.test_fraction);
  synth->add_flag("--random-pose", o.random_pose, "Rotate every sample randomly");

  auto* corrupt = app.add_subcommand("corrupt", "Apply a sampled affine and a mask to one cloud");
  corrupt->add_option("--input", o.input, "Input cloud (.xyz or .ply)")->required();
  corrupt->add_option("--out", o.out, "Output directory")->required();
  corrupt->add_option("--config", o.config, "Key-value config file");
  corrupt->add_option("--set", o.sets, "Extra key=value override (repeatable)");
  corrupt->add_option("--format", o.format, "Output format: xyz|ply")->check(CLI::IsMember({"xyz", "ply"}))->default_val("xyz");
  key_flag(corrupt, o, "--seed", "seed", "Random seed (default 0)");
  corruption_flags(corrupt, o);

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain an autoencoder on the train split of a manifest");
  pretrain->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  pretrain->add_option("--out", o.out, "Output directory")->required();
  pretrain->add_option("--config", o.config, "Key-value config file");
  pretrain->add_option("--set", o.sets, "Extra key=value override (repeatable)");
  pretrain->add_option("--resume", o.resume, "Continue from a checkpoint written under the same config");
  pretrain->add_flag("--init-only", o.init_only, "Write the randomly initialized checkpoint and stop");
  pretrain->add_option("--stop-after", o.stop_after, "Stop once this many epochs are complete (resume later)");
  key_flag(pretrain, o, "--seed", "seed", "Random seed (default 0)");
  corruption_flags(pretrain, o);
  model_flags(pretrain, o);

  auto* probe = app.add_subcommand("probe", "Linear SVM probe on frozen encoder features");
  probe->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint")->required();
  probe->add_option("--manifest", o.manifest, "Dataset manifest with train and test splits")->required();
  probe->add_option("--out", o.out, "Output directory")->required();
  probe->add_option("--c", o.cs, "Regularization values swept on a validation split")->default_str("0.1 1 10");
  probe->add_flag("--save-features", o.save_features, "Also write the feature tables as CSV");

  auto* fewshot = app.add_subcommand("fewshot", "Few-shot episodes on frozen encoder features");
  fewshot->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint")->required();
  fewshot->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  fewshot->add_option("--out", o.out, "Output directory")->required();
  fewshot->add_option("--seed", seed, "Episode seed")->default_val(0);
  fewshot->add_option("--split", o.split, "Split to draw from: all|train|val|test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}))
      ->default_val("all");
  fewshot->add_option("--ways", o.episode.ways, "Classes per episode")->default_val(o.episode.ways);
  fewshot->add_option("--shots", o.episode.shots, "Support samples per class")->default_val(o.episode.shots);
  fewshot->add_option("--queries", o.episode.queries, "Query samples per class")->default_val(o.episode.queries);
  fewshot->add_option("--repetitions", o.episode.repetitions, "Episodes")->default_val(o.episode.repetitions);
  fewshot->add_option("--c", o.episode.c, "Regularization")->default_val(o.episode.c);

  auto* reconstruct = app.add_subcommand("reconstruct", "Export clean, corrupted and reconstructed clouds");
  reconstruct->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required();
  reconstruct->add_option("--input", o.input, "Input cloud (.xyz or .ply)")->required();
  reconstruct->add_option("--out", o.out, "Output directory")->required();
  reconstruct->add_option("--seed", seed, "Corruption seed")->default_val(0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return kUsage;
  }

  try {
    if (*synth) return run_synth(o, seed);
    if (*corrupt) return run_corrupt(o);
    if (*pretrain) return run_pretrain(o);
    if (*probe) return run_probe(o);
    if (*fewshot) return run_fewshot(o, seed);
    if (*reconstruct) return run_reconstruct(o, seed);
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    report_error("io", e.what());
    return kIoError;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kFailure;
  }
  return kUsage;
}

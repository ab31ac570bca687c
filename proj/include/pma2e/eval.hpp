#pragma once

// Frozen-encoder evaluation: feature extraction, a linear SVM probe,
// few-shot episodes and reconstruction export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "io.hpp"
#include "trainer.hpp"

namespace pma2e {

/// Patch grouping at probe time is deterministic: FPS starts from a fixed
/// stream.
inline constexpr std::uint64_t kProbeSeed = 0x70726f62;

struct FeatureTable {
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;
  std::uint64_t fingerprint = 0;  // of the encoder checkpoint

  std::size_t size() const { return rows.size(); }
  std::size_t dim() const { return rows.empty() ? 0 : rows.front().size(); }

  void add(std::string id, std::string label, std::vector<double> row) {
    require(rows.empty() || row.size() == dim(), ErrorKind::Shape,
            "feature row of dim " + std::to_string(row.size()) + " in a table of dim " + std::to_string(dim()));
    ids.push_back(std::move(id));
    labels.push_back(std::move(label));
    rows.push_back(std::move(row));
  }

  void validate() const {
    require(ids.size() == rows.size() && labels.size() == rows.size(), ErrorKind::Format, "feature table is ragged");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require(rows[i].size() == dim(), ErrorKind::Format, "feature rows differ in dimension");
      require(seen.insert(ids[i]).second, ErrorKind::Format, "duplicate feature id " + ids[i]);
    }
  }

  FeatureTable subset(const std::vector<std::size_t>& idx) const {
    FeatureTable t;
    t.fingerprint = fingerprint;
    for (auto i : idx) t.add(ids.at(i), labels.at(i), rows.at(i));
    return t;
  }
};

/// CSV: a "# fingerprint <hex>" line, then "id,label,f_0,...".
inline void write_feature_csv(const std::string& path, const FeatureTable& t) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(t.fingerprint));
  out << "# fingerprint " << buf << "\nid,label";
  for (std::size_t j = 0; j < t.dim(); ++j) out << ",f_" << j;
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << t.ids[i] << ',' << t.labels[i];
    for (double v : t.rows[i]) out << ',' << format_double(v);
    out << '\n';
  }
}

inline FeatureTable read_feature_csv(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  FeatureTable t;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (line.rfind("# fingerprint ", 0) == 0) {
      t.fingerprint = std::stoull(line.substr(14), nullptr, 16);
      continue;
    }
    if (!header) {
      require(line.rfind("id,label", 0) == 0, ErrorKind::Format, path + ": missing 'id,label,...' header");
      header = true;
      continue;
    }
    const auto parts = split(line, ',');
    require(parts.size() >= 3, ErrorKind::Format, path + ":" + std::to_string(lineno) + ": too few columns");
    std::vector<double> row;
    for (std::size_t j = 2; j < parts.size(); ++j) row.push_back(detail::parse_double("feature", parts[j]));
    t.add(parts[0], parts[1], std::move(row));
  }
  t.validate();
  return t;
}

/// Encoder feature of one clean cloud: the global feature for PointNet, or
/// concat(max, mean) over all encoded patch tokens for the Transformer.
template <typename T>
std::vector<double> extract_feature(const Model<T>& model, const PointCloud& cloud) {
  Tensor<T> f;
  if (!model.is_transformer()) {
    f = model.pointnet().encode(points_tensor<T>(cloud.points()));
  } else {
    const auto& tc = model.config().transformer;
    Rng rng(kProbeSeed);
    const PatchSet ps = normalize_patches(patchify(cloud, tc.patches, tc.patch_size, rng));
    const auto plan = unmasked_plan(tc.patches);
    const auto& net = model.transformer();
    const auto enc = net.encode(net.embed(patch_tensor<T>(ps, plan.visible)), center_tensor<T>(ps, plan.visible));
    f = concat<T>({max_pool(enc, 0), mean_pool(enc, 0)}, 0);
  }
  return std::vector<double>(f.values().begin(), f.values().end());
}

template <typename T>
FeatureTable extract_features(const Model<T>& model, const std::vector<PointCloud>& clouds,
                              const std::vector<std::string>& ids, const std::vector<std::string>& labels) {
  require(clouds.size() == ids.size() && ids.size() == labels.size(), ErrorKind::InvalidArgument,
          "extract_features: clouds, ids and labels differ in length");
  FeatureTable t;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    require(clouds[i].size() == model.config().points || model.is_transformer(), ErrorKind::Shape,
            "cloud " + ids[i] + " has " + std::to_string(clouds[i].size()) + " points, encoder expects " +
                std::to_string(model.config().points));
    t.add(ids[i], labels[i], extract_feature(model, clouds[i]));
  }
  t.validate();
  return t;
}

/// Features for one manifest split under a checkpoint's frozen encoder.
inline FeatureTable extract_features(const Checkpoint& ck, const DatasetManifest& m, const std::string& split) {
  const auto cfg = checkpoint_config(ck);
  std::vector<std::size_t> label_idx;
  std::vector<std::string> ids;
  const auto clouds = load_split(m, split, cfg.model.points, cfg.seed, &label_idx, &ids);
  require(!clouds.empty(), ErrorKind::InvalidArgument, "manifest has no '" + split + "' entries");
  std::vector<std::string> labels;
  for (auto l : label_idx) labels.push_back(m.labels[l]);
  FeatureTable t = cfg.precision == Precision::Double ? extract_features(load_model<double>(ck), clouds, ids, labels)
                                                      : extract_features(load_model<float>(ck), clouds, ids, labels);
  t.fingerprint = ck.fingerprint;
  return t;
}

// ---------------------------------------------------------------------------
// Linear SVM

struct SvmOptions {
  double c = 1.0;
  std::size_t max_passes = 2000;
  double tolerance = 1e-6;
};

/// One-vs-rest linear SVM, hinge loss with L2 regularization, trained by
/// dual coordinate descent in a fixed sweep order. A constant feature
/// carries the bias. Features are centered on the training mean and scaled
/// by one global RMS factor, which keeps the model equivariant under
/// orthogonal transforms of the feature space.
class LinearSvm {
 public:
  LinearSvm(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y, std::size_t classes,
            const SvmOptions& opt = {}) {
    require(!x.empty() && x.size() == y.size(), ErrorKind::InvalidArgument, "svm: empty or mismatched training set");
    require(opt.c > 0.0, ErrorKind::InvalidArgument, "svm: regularization must be positive");
    std::set<std::size_t> present(y.begin(), y.end());
    require(present.size() >= 2, ErrorKind::InvalidArgument, "linear probe needs at least two classes in training");
    dim_ = x.front().size();
    mean_.assign(dim_, 0.0);
    for (const auto& r : x) {
      require(r.size() == dim_, ErrorKind::Shape, "svm: ragged features");
      for (std::size_t j = 0; j < dim_; ++j) mean_[j] += r[j];
    }
    for (auto& v : mean_) v /= static_cast<double>(x.size());
    double ss = 0.0;
    for (const auto& r : x)
      for (std::size_t j = 0; j < dim_; ++j) ss += (r[j] - mean_[j]) * (r[j] - mean_[j]);
    const double rms = std::sqrt(ss / static_cast<double>(x.size()));
    inv_scale_ = rms > 1e-12 ? 1.0 / rms : 1.0;

    std::vector<std::vector<double>> z;
    z.reserve(x.size());
    for (const auto& r : x) z.push_back(prepare(r));
    std::vector<double> qii(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) qii[i] = dot(z[i], z[i]);

    weights_.assign(classes, std::vector<double>(dim_ + 1, 0.0));
    for (std::size_t c = 0; c < classes; ++c) {
      auto& w = weights_[c];
      std::vector<double> alpha(z.size(), 0.0);
      for (std::size_t pass = 0; pass < opt.max_passes; ++pass) {
        double max_pg = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
          const double yi = y[i] == c ? 1.0 : -1.0;
          const double g = yi * dot(w, z[i]) - 1.0;
          double pg = g;
          if (alpha[i] == 0.0) pg = std::min(g, 0.0);
          else if (alpha[i] == opt.c) pg = std::max(g, 0.0);
          max_pg = std::max(max_pg, std::abs(pg));
          if (pg == 0.0 || qii[i] == 0.0) continue;
          const double old = alpha[i];
          alpha[i] = std::clamp(old - g / qii[i], 0.0, opt.c);
          const double d = (alpha[i] - old) * yi;
          for (std::size_t j = 0; j <= dim_; ++j) w[j] += d * z[i][j];
        }
        if (max_pg < opt.tolerance) break;
      }
    }
  }

  std::size_t predict(const std::vector<double>& f) const {
    const auto z = prepare(f);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < weights_.size(); ++c) {
      const double s = dot(weights_[c], z);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    return best;
  }

 private:
  static double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
  }

  std::vector<double> prepare(const std::vector<double>& f) const {
    require(f.size() == dim_, ErrorKind::Shape, "svm: feature dim mismatch");
    std::vector<double> z(dim_ + 1);
    for (std::size_t j = 0; j < dim_; ++j) z[j] = (f[j] - mean_[j]) * inv_scale_;
    z[dim_] = 1.0;
    return z;
  }

  std::size_t dim_ = 0;
  std::vector<double> mean_;
  double inv_scale_ = 1.0;
  std::vector<std::vector<double>> weights_;
};

namespace detail {

/// Label strings to indices over the union of both tables, sorted.
inline std::map<std::string, std::size_t> label_map(const FeatureTable& a, const FeatureTable& b) {
  std::set<std::string> all(a.labels.begin(), a.labels.end());
  all.insert(b.labels.begin(), b.labels.end());
  std::map<std::string, std::size_t> m;
  for (const auto& l : all) m.emplace(l, m.size());
  return m;
}

}  // namespace detail

/// Test accuracy in [0,1] of a probe trained on `train`.
inline double linear_probe(const FeatureTable& train, const FeatureTable& test, double c = 1.0) {
  require(train.size() > 0 && test.size() > 0, ErrorKind::InvalidArgument, "linear probe needs non-empty tables");
  require(train.dim() == test.dim(), ErrorKind::Shape,
          "train features have dim " + std::to_string(train.dim()) + ", test " + std::to_string(test.dim()));
  const auto labels = detail::label_map(train, test);
  std::vector<std::size_t> y;
  for (const auto& l : train.labels) y.push_back(labels.at(l));
  SvmOptions opt;
  opt.c = c;
  const LinearSvm svm(train.rows, y, labels.size(), opt);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += svm.predict(test.rows[i]) == labels.at(test.labels[i]);
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

struct ProbeResult {
  double accuracy = 0.0;
  double chosen_c = 1.0;
  std::vector<std::pair<double, double>> validation;  // (C, validation accuracy)
};

/// Picks C on a stratified validation split of `train` (the first C wins
/// ties), then retrains on all of `train`.
inline ProbeResult probe_sweep(const FeatureTable& train, const FeatureTable& test,
                               const std::vector<double>& cs = {0.1, 1.0, 10.0}, double val_fraction = 0.2,
                               std::uint64_t seed = 0) {
  require(!cs.empty(), ErrorKind::InvalidArgument, "probe sweep needs at least one C");
  ProbeResult r;
  r.chosen_c = cs.front();
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.size(); ++i) by_class[train.labels[i]].push_back(i);
  std::vector<std::size_t> fit, val;
  Rng rng(seed);
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto nv = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) (i < nv && idx.size() - nv >= 1 ? val : fit).push_back(idx[i]);
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());
  if (cs.size() > 1 && !val.empty()) {
    double best = -1.0;
    for (double c : cs) {
      const double acc = linear_probe(train.subset(fit), train.subset(val), c);
      r.validation.push_back({c, acc});
      if (acc > best) {
        best = acc;
        r.chosen_c = c;
      }
    }
  }
  r.accuracy = linear_probe(train, test, r.chosen_c);
  return r;
}

struct EpisodeSpec {
  std::size_t ways = 5;
  std::size_t shots = 10;
  std::size_t queries = 15;
  std::size_t repetitions = 10;
  std::uint64_t seed = 0;
  double c = 1.0;

  void validate() const {
    require(ways >= 2, ErrorKind::Config, "few-shot needs at least 2 ways");
    require(shots >= 1 && queries >= 1 && repetitions >= 1, ErrorKind::Config,
            "few-shot shots, queries and repetitions must be positive");
  }
};

struct FewShotResult {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over repetitions
  std::vector<double> accuracies;
  std::vector<std::vector<std::string>> episode_classes;
  std::vector<std::vector<std::size_t>> episode_support;  // table rows
  std::vector<std::vector<std::size_t>> episode_query;
};

/// Episode r draws `ways` classes, then `shots` support and `queries` query
/// samples per class, from its own stream derive_seed(seed, r).
inline FewShotResult fewshot_eval(const FeatureTable& table, const EpisodeSpec& spec) {
  spec.validate();
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < table.size(); ++i) by_class[table.labels[i]].push_back(i);
  require(by_class.size() >= spec.ways, ErrorKind::InvalidArgument,
          "few-shot needs " + std::to_string(spec.ways) + " classes, table has " + std::to_string(by_class.size()));
  for (const auto& [label, idx] : by_class)
    require(idx.size() >= spec.shots + spec.queries, ErrorKind::InvalidArgument,
            "class '" + label + "' has " + std::to_string(idx.size()) + " samples, episodes need " +
                std::to_string(spec.shots + spec.queries));
  std::vector<std::string> classes;
  for (const auto& [label, idx] : by_class) classes.push_back(label);

  FewShotResult r;
  for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
    Rng rng(derive_seed(spec.seed, rep));
    auto pool = classes;
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(spec.ways);
    std::sort(pool.begin(), pool.end());
    std::vector<std::size_t> support, query;
    for (const auto& label : pool) {
      auto idx = by_class.at(label);
      std::shuffle(idx.begin(), idx.end(), rng);
      support.insert(support.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(spec.shots));
      query.insert(query.end(), idx.begin() + static_cast<std::ptrdiff_t>(spec.shots),
                   idx.begin() + static_cast<std::ptrdiff_t>(spec.shots + spec.queries));
    }
    r.accuracies.push_back(linear_probe(table.subset(support), table.subset(query), spec.c));
    r.episode_classes.push_back(pool);
    r.episode_support.push_back(std::move(support));
    r.episode_query.push_back(std::move(query));
  }
  const double n = static_cast<double>(r.accuracies.size());
  r.mean = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : r.accuracies) var += (a - r.mean) * (a - r.mean);
  r.std = std::sqrt(var / n);
  return r;
}

// ---------------------------------------------------------------------------
// Reconstruction export

struct ReconstructionFiles {
  PointCloud clean;
  PointCloud corrupted;
  PointCloud reconstruction;
  std::optional<PointCloud> visible;           // transformer: visible patches, target frame
  std::optional<PointCloud> masked_prediction;  // transformer: predicted patches placed at target centers
  std::optional<PointCloud> center_prediction;  // transformer: predicted centers
};

namespace detail {

inline std::vector<Vec3> patch_points(const PatchSet& ps, const std::vector<std::size_t>& rows, bool absolute) {
  std::vector<Vec3> out;
  for (auto r : rows)
    for (std::size_t j = 0; j < ps.k; ++j) {
      Vec3 p = ps.point(r, j);
      if (absolute && ps.normalized)
        for (int a = 0; a < 3; ++a) p[a] += ps.centers[r][a];
      out.push_back(p);
    }
  return out;
}

template <typename T>
ReconstructionFiles reconstruct(const Model<T>& model, const TrainConfig& cfg, const PointCloud& cloud,
                                std::uint64_t seed) {
  Rng rng(seed);
  auto tr = forward_sample(model, cfg, cloud, rng);
  const bool augment = cfg.affine_role == AffineRole::Augmentation;
  if (!model.is_transformer())
    return {cloud, *tr.corrupted_input, PointCloud(tensor_points(tr.prediction)), {}, {}, {}};
  const PatchSet& target = augment ? *tr.corrupted_patches : *tr.clean_patches;
  const auto corrupted = patch_points(*tr.corrupted_patches, tr.plan.visible, true);
  if (cfg.model.objective == Objective::Whole)
    return {cloud, PointCloud(corrupted), PointCloud(tensor_points(tr.prediction)), {}, {}, {}};
  std::vector<std::size_t> all(target.n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto& rows = tr.plan.masked.empty() ? all : tr.plan.masked;
  auto pred = tensor_points(tr.prediction);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < target.k; ++j)
      for (int a = 0; a < 3; ++a) pred[i * target.k + j][a] += target.centers[rows[i]][a];
  auto visible = tr.plan.masked.empty() ? std::vector<Vec3>{} : patch_points(target, tr.plan.visible, true);
  std::vector<Vec3> recon = visible;
  recon.insert(recon.end(), pred.begin(), pred.end());
  ReconstructionFiles f{cloud, PointCloud(corrupted), PointCloud(recon), {}, PointCloud(pred),
                        PointCloud(tensor_points(tr.center_prediction))};
  if (!visible.empty()) f.visible = PointCloud(visible);
  return f;
}

}  // namespace detail

/// Runs one corrupted forward pass (stream `seed`) and writes clean.xyz,
/// corrupted.xyz and reconstruction.xyz, plus visible.xyz,
/// masked_prediction.xyz and center_prediction.xyz for the patch model.
inline ReconstructionFiles reconstruct_export(const Checkpoint& ck, const PointCloud& cloud, const std::string& out_dir,
                                              std::uint64_t seed) {
  const auto cfg = checkpoint_config(ck);
  require(cloud.size() == cfg.model.points, ErrorKind::InvalidArgument,
          "cloud has " + std::to_string(cloud.size()) + " points, checkpoint expects " + std::to_string(cfg.model.points));
  const auto files = cfg.precision == Precision::Double ? detail::reconstruct(load_model<double>(ck), cfg, cloud, seed)
                                                        : detail::reconstruct(load_model<float>(ck), cfg, cloud, seed);
  fs::create_directories(out_dir);
  auto put = [&](const char* name, const PointCloud& c) { write_cloud((fs::path(out_dir) / name).string(), c); };
  put("clean.xyz", files.clean);
  put("corrupted.xyz", files.corrupted);
  put("reconstruction.xyz", files.reconstruction);
  if (files.visible) put("visible.xyz", *files.visible);
  if (files.masked_prediction) put("masked_prediction.xyz", *files.masked_prediction);
  if (files.center_prediction) put("center_prediction.xyz", *files.center_prediction);
  return files;
}

}  // namespace pma2e

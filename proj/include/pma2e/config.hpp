#pragma once

// Flat key-value configuration ("key = value", '#' comments) and the
// training configuration it describes.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "corruption.hpp"
#include "models.hpp"
#include "optim.hpp"

namespace pma2e {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(const std::string& text, const std::string& origin = "config") {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Config,
            origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorKind::Config, origin + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::Config, "config key '" + key + "': '" + v + "' is not a number");
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos == v.size() && n >= 0) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  fail(ErrorKind::Config, "config key '" + key + "': '" + v + "' is not a non-negative integer");
}

inline Range parse_range(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  require(parts.size() == 2, ErrorKind::Config, "config key '" + key + "': expected 'lo,hi'");
  return {parse_double(key, parts[0]), parse_double(key, parts[1])};
}

inline std::string range_str(const Range& r) { return format_double(r.lo) + "," + format_double(r.hi); }

template <typename E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string allowed;
  for (const auto& [name, e] : options) {
    if (v == name) return e;
    allowed += (allowed.empty() ? "" : "|") + std::string(name);
  }
  fail(ErrorKind::Config, "config key '" + key + "': '" + v + "' is not one of " + allowed);
}

inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& p : split(v, ',')) out.push_back(parse_size(key, p));
  return out;
}

inline std::string widths_str(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

}  // namespace detail

inline const char* family_name(AffineFamily f) {
  switch (f) {
    case kScale: return "scale";
    case kShear: return "shear";
    case kReflect: return "reflect";
    case kRotate: return "rotate";
    case kTranslate: return "translate";
    default: return "?";
  }
}

/// "full", "none", or a comma-separated list of sub-family names.
inline std::uint8_t parse_families(const std::string& key, const std::string& v) {
  if (v == "full") return kAllFamilies;
  if (v == "none") return 0;
  std::uint8_t mask = 0;
  for (const auto& p : split(v, ',')) {
    mask |= detail::parse_enum<std::uint8_t>(key, p,
                                             {{"scale", kScale},
                                              {"shear", kShear},
                                              {"reflect", kReflect},
                                              {"rotate", kRotate},
                                              {"translate", kTranslate}});
  }
  return mask;
}

inline std::string families_str(std::uint8_t mask) {
  if (mask == kAllFamilies) return "full";
  if (mask == 0) return "none";
  std::string s;
  for (auto f : {kScale, kShear, kReflect, kRotate, kTranslate})
    if (mask & f) s += (s.empty() ? "" : ",") + std::string(family_name(f));
  return s;
}

/// Applies affine-spec keys (optionally under a prefix such as "affine.").
/// Returns the keys it consumed.
inline std::vector<std::string> apply_affine_keys(AffineFamilySpec& spec, const KeyValues& kv,
                                                  const std::string& prefix) {
  std::vector<std::string> used;
  const char* axes[3] = {"x", "y", "z"};
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(prefix + key);
    if (it == kv.end()) return nullptr;
    used.push_back(it->first);
    return &it->second;
  };
  auto ranges = [&](const char* name, std::array<Range, 3>& r) {
    if (auto v = get(name)) r.fill(detail::parse_range(prefix + name, *v));
    for (int a = 0; a < 3; ++a)
      if (auto v = get(std::string(name) + "_" + axes[a])) r[static_cast<std::size_t>(a)] = detail::parse_range(name, *v);
  };
  ranges("rotate", spec.rotate);
  ranges("translate", spec.translate);
  ranges("scale", spec.scale);
  if (auto v = get("shear")) spec.shear = detail::parse_range(prefix + "shear", *v);
  if (auto v = get("reflect")) spec.reflect.fill(detail::parse_double(prefix + "reflect", *v));
  for (int a = 0; a < 3; ++a)
    if (auto v = get(std::string("reflect_") + axes[a]))
      spec.reflect[static_cast<std::size_t>(a)] = detail::parse_double("reflect", *v);
  if (auto v = get("enabled")) spec.enabled = parse_families(prefix + "enabled", *v);
  return used;
}

inline AffineFamilySpec read_affine_spec(const std::string& path) {
  const auto kv = read_key_values(path);
  AffineFamilySpec spec;
  const auto used = apply_affine_keys(spec, kv, "");
  for (const auto& [k, v] : kv)
    require(std::find(used.begin(), used.end(), k) != used.end(), ErrorKind::Config,
            path + ": unknown affine spec key '" + k + "'");
  spec.validate();
  return spec;
}

enum class MaskKind { Random, Fixed, View, Patch, None };
enum class AffineRole { Corruption, Augmentation };
enum class Precision { Float, Double };

inline const char* to_string(MaskKind m) {
  switch (m) {
    case MaskKind::Random: return "random";
    case MaskKind::Fixed: return "fixed";
    case MaskKind::View: return "view";
    case MaskKind::Patch: return "patch";
    case MaskKind::None: return "none";
  }
  return "?";
}

inline MaskKind parse_mask_kind(const std::string& key, const std::string& v) {
  return detail::parse_enum<MaskKind>(key, v,
                                      {{"random", MaskKind::Random},
                                       {"fixed", MaskKind::Fixed},
                                       {"view", MaskKind::View},
                                       {"patch", MaskKind::Patch},
                                       {"none", MaskKind::None}});
}

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::Decomposed: return "decomposed";
    case Objective::Whole: return "whole";
    case Objective::LocalOnly: return "local-only";
    case Objective::GlobalOnly: return "global-only";
  }
  return "?";
}

inline const char* to_string(EncoderKind e) { return e == EncoderKind::PointNet ? "pointnet" : "transformer"; }
inline const char* to_string(HeadKind h) { return h == HeadKind::Fc ? "fc" : "fold"; }
inline const char* to_string(AffineRole r) { return r == AffineRole::Corruption ? "corruption" : "augmentation"; }
inline const char* to_string(Precision p) { return p == Precision::Float ? "float" : "double"; }

struct TrainConfig {
  std::size_t epochs = 300;
  double lr = 0.001;
  double lr_min = 0.0;
  std::size_t warmup_epochs = 0;
  std::size_t batch_size = 8;
  double lambda = 1.0;
  double alpha = 0.6;
  MaskKind mask = MaskKind::Patch;
  std::size_t cluster_size = 32;
  std::size_t kappa_max = 8;
  AffineFamilySpec affine;
  AffineRole affine_role = AffineRole::Corruption;
  AdamWConfig adamw;
  double grad_clip = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  Precision precision = Precision::Float;
  ModelConfig model;

  void validate() const {
    require(epochs >= 1, ErrorKind::Config, "epochs must be positive");
    require(std::isfinite(lr) && lr >= 0.0 && lr_min >= 0.0 && lr_min <= lr, ErrorKind::Config,
            "need 0 <= lr_min <= lr");
    require(batch_size >= 1, ErrorKind::Config, "batch_size must be positive");
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::Config, "lambda must be >= 0");
    require(cluster_size >= 1 && kappa_max >= 1, ErrorKind::Config, "cluster_size and kappa_max must be positive");
    require(grad_clip >= 0.0, ErrorKind::Config, "grad_clip must be >= 0");
    affine.validate();
    model.validate();
    if (mask != MaskKind::None) {
      require(alpha > 0.0 && alpha < 1.0, ErrorKind::Config, "alpha must lie in (0,1)");
    }
    if (model.encoder == EncoderKind::Transformer) {
      require(mask == MaskKind::Patch || mask == MaskKind::None, ErrorKind::Config,
              "transformer encoder supports mask=patch|none");
      if (mask == MaskKind::Patch) mask_budget(alpha, model.transformer.patches);
    } else {
      require(mask != MaskKind::Patch, ErrorKind::Config, "pointnet encoder supports mask=random|fixed|view|none");
      require(model.objective == Objective::Decomposed, ErrorKind::Config,
              "pointnet encoder reconstructs the whole cloud; leave objective=decomposed");
      if (mask != MaskKind::None) mask_budget(alpha, model.points);
    }
  }

  /// Every key with its resolved value; parses back to an identical config.
  std::string to_text() const {
    std::ostringstream os;
    auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
    kv("epochs", std::to_string(epochs));
    kv("lr", format_double(lr));
    kv("lr_min", format_double(lr_min));
    kv("warmup_epochs", std::to_string(warmup_epochs));
    kv("batch_size", std::to_string(batch_size));
    kv("lambda", format_double(lambda));
    kv("alpha", format_double(alpha));
    kv("mask", to_string(mask));
    kv("cluster_size", std::to_string(cluster_size));
    kv("kappa_max", std::to_string(kappa_max));
    kv("affine", families_str(affine.enabled));
    const char* axes[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) kv(std::string("affine.rotate_") + axes[a], detail::range_str(affine.rotate[a]));
    for (int a = 0; a < 3; ++a) kv(std::string("affine.translate_") + axes[a], detail::range_str(affine.translate[a]));
    for (int a = 0; a < 3; ++a) kv(std::string("affine.scale_") + axes[a], detail::range_str(affine.scale[a]));
    kv("affine.shear", detail::range_str(affine.shear));
    for (int a = 0; a < 3; ++a) kv(std::string("affine.reflect_") + axes[a], format_double(affine.reflect[a]));
    kv("affine_role", to_string(affine_role));
    kv("beta1", format_double(adamw.beta1));
    kv("beta2", format_double(adamw.beta2));
    kv("adam_eps", format_double(adamw.eps));
    kv("weight_decay", format_double(adamw.weight_decay));
    kv("grad_clip", format_double(grad_clip));
    kv("seed", std::to_string(seed));
    kv("precision", to_string(precision));
    kv("encoder", to_string(model.encoder));
    kv("objective", to_string(model.objective));
    kv("points", std::to_string(model.points));
    kv("dim", std::to_string(model.transformer.dim));
    kv("encoder_depth", std::to_string(model.transformer.encoder_depth));
    kv("decoder_depth", std::to_string(model.transformer.decoder_depth));
    kv("heads", std::to_string(model.transformer.heads));
    kv("ff_mult", std::to_string(model.transformer.ff_mult));
    kv("patches", std::to_string(model.transformer.patches));
    kv("patch_size", std::to_string(model.transformer.patch_size));
    kv("embed_hidden", detail::widths_str(model.transformer.embed_hidden));
    std::vector<std::size_t> pn_hidden(model.pointnet.widths.begin() + 1, model.pointnet.widths.end() - 1);
    kv("pointnet_hidden", detail::widths_str(pn_hidden));
    kv("pointnet_dim", std::to_string(model.pointnet.dim()));
    kv("local_decoder", to_string(model.local_head));
    kv("global_decoder", to_string(model.global_head));
    kv("decoder", to_string(model.cloud_head));
    kv("fc_hidden", std::to_string(model.fc_hidden));
    kv("fold_hidden", std::to_string(model.fold_hidden));
    return os.str();
  }
};

namespace detail {

inline HeadKind parse_head(const std::string& key, const std::string& v) {
  return parse_enum<HeadKind>(key, v, {{"fc", HeadKind::Fc}, {"fold", HeadKind::Fold}});
}

}  // namespace detail

/// Overlays `kv` onto `cfg`. Unknown keys are rejected. When the encoder is
/// switched and no mask is given, the mask follows the encoder (patch for
/// transformer, random for pointnet).
inline void apply_config(TrainConfig& cfg, const KeyValues& kv) {
  using namespace detail;
  std::vector<std::string> used = apply_affine_keys(cfg.affine, kv, "affine.");
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    used.push_back(key);
    return &it->second;
  };
  if (auto v = get("epochs")) cfg.epochs = parse_size("epochs", *v);
  if (auto v = get("lr")) cfg.lr = parse_double("lr", *v);
  if (auto v = get("lr_min")) cfg.lr_min = parse_double("lr_min", *v);
  if (auto v = get("warmup_epochs")) cfg.warmup_epochs = parse_size("warmup_epochs", *v);
  if (auto v = get("batch_size")) cfg.batch_size = parse_size("batch_size", *v);
  if (auto v = get("lambda")) cfg.lambda = parse_double("lambda", *v);
  if (auto v = get("alpha")) cfg.alpha = parse_double("alpha", *v);
  if (auto v = get("encoder")) {
    cfg.model.encoder = parse_enum<EncoderKind>("encoder", *v,
                                                {{"pointnet", EncoderKind::PointNet}, {"transformer", EncoderKind::Transformer}});
    if (!kv.count("mask")) cfg.mask = cfg.model.encoder == EncoderKind::PointNet ? MaskKind::Random : MaskKind::Patch;
  }
  if (auto v = get("mask")) cfg.mask = parse_mask_kind("mask", *v);
  if (auto v = get("cluster_size")) cfg.cluster_size = parse_size("cluster_size", *v);
  if (auto v = get("kappa_max")) cfg.kappa_max = parse_size("kappa_max", *v);
  if (auto v = get("affine")) cfg.affine.enabled = parse_families("affine", *v);
  if (auto v = get("affine_role"))
    cfg.affine_role = parse_enum<AffineRole>("affine_role", *v,
                                             {{"corruption", AffineRole::Corruption}, {"augmentation", AffineRole::Augmentation}});
  if (auto v = get("beta1")) cfg.adamw.beta1 = parse_double("beta1", *v);
  if (auto v = get("beta2")) cfg.adamw.beta2 = parse_double("beta2", *v);
  if (auto v = get("adam_eps")) cfg.adamw.eps = parse_double("adam_eps", *v);
  if (auto v = get("weight_decay")) cfg.adamw.weight_decay = parse_double("weight_decay", *v);
  if (auto v = get("grad_clip")) cfg.grad_clip = parse_double("grad_clip", *v);
  if (auto v = get("seed")) cfg.seed = parse_size("seed", *v);
  if (auto v = get("precision"))
    cfg.precision = parse_enum<Precision>("precision", *v, {{"float", Precision::Float}, {"double", Precision::Double}});
  if (auto v = get("objective"))
    cfg.model.objective = parse_enum<Objective>("objective", *v,
                                                {{"decomposed", Objective::Decomposed},
                                                 {"whole", Objective::Whole},
                                                 {"local-only", Objective::LocalOnly},
                                                 {"global-only", Objective::GlobalOnly}});
  if (auto v = get("points")) cfg.model.points = parse_size("points", *v);
  auto& tc = cfg.model.transformer;
  if (auto v = get("dim")) tc.dim = parse_size("dim", *v);
  if (auto v = get("encoder_depth")) tc.encoder_depth = parse_size("encoder_depth", *v);
  if (auto v = get("decoder_depth")) tc.decoder_depth = parse_size("decoder_depth", *v);
  if (auto v = get("heads")) tc.heads = parse_size("heads", *v);
  if (auto v = get("ff_mult")) tc.ff_mult = parse_size("ff_mult", *v);
  if (auto v = get("patches")) tc.patches = parse_size("patches", *v);
  if (auto v = get("patch_size")) tc.patch_size = parse_size("patch_size", *v);
  if (auto v = get("embed_hidden")) tc.embed_hidden = parse_widths("embed_hidden", *v);
  std::vector<std::size_t> pn_hidden(cfg.model.pointnet.widths.begin() + 1, cfg.model.pointnet.widths.end() - 1);
  if (auto v = get("pointnet_hidden")) pn_hidden = parse_widths("pointnet_hidden", *v);
  // dim sets the feature width of both encoders unless pointnet_dim overrides it
  std::size_t pn_dim = cfg.model.pointnet.dim();
  if (kv.count("dim")) pn_dim = tc.dim;
  if (auto v = get("pointnet_dim")) pn_dim = parse_size("pointnet_dim", *v);
  cfg.model.pointnet.widths = {3};
  cfg.model.pointnet.widths.insert(cfg.model.pointnet.widths.end(), pn_hidden.begin(), pn_hidden.end());
  cfg.model.pointnet.widths.push_back(pn_dim);
  if (auto v = get("local_decoder")) cfg.model.local_head = parse_head("local_decoder", *v);
  if (auto v = get("global_decoder")) cfg.model.global_head = parse_head("global_decoder", *v);
  if (auto v = get("decoder")) cfg.model.cloud_head = parse_head("decoder", *v);
  if (auto v = get("fc_hidden")) cfg.model.fc_hidden = parse_size("fc_hidden", *v);
  if (auto v = get("fold_hidden")) cfg.model.fold_hidden = parse_size("fold_hidden", *v);
  for (const auto& [k, v] : kv)
    require(std::find(used.begin(), used.end(), k) != used.end(), ErrorKind::Config, "unknown config key '" + k + "'");
}

inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  apply_config(cfg, parse_key_values(text));
  cfg.validate();
  return cfg;
}

}  // namespace pma2e

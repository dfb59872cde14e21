#include "vskel/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "vskel/metrics.hpp"
#include "vskel/random.hpp"
#include "vskel/skeleton.hpp"

namespace vskel::harness {

namespace {

// ---- value parsing -------------------------------------------------------------

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expect) {
  throw ConfigError("config key '" + key + "': invalid value '" + value + "' (expected " + expect +
                    ")");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad(key, v, "a number");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

Index3 to_dims(const std::string& key, const std::string& v) {
  auto parts = split(v, 'x');
  if (parts.size() != 3) bad(key, v, "XxYxZ, e.g. 128x128x16");
  Index3 d{};
  for (int a = 0; a < 3; ++a) d[a] = static_cast<std::size_t>(to_u64(key, parts[a]));
  return d;
}

std::string dims_text(const Index3& d) { return dims_str(d); }

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

std::string_view scale_name(Scale s) { return s == Scale::Desk ? "desk" : "paper"; }
std::string_view mode_name(TrainMode m) { return m == TrainMode::EndToEnd ? "end_to_end" : "split"; }
std::string_view metric_name(TuneMetric m) {
  switch (m) {
    case TuneMetric::Auto: return "auto";
    case TuneMetric::Coverage: return "coverage";
    case TuneMetric::SkeletonError: return "skeleton_error";
    case TuneMetric::Dice: return "dice";
  }
  return "?";
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class Getter>
Key num_key(std::string name, double ExperimentConfig::*field, Getter) {
  return {name,
          [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*field = to_double(k, v);
          },
          [field](const ExperimentConfig& c) { return fmt_double(c.*field); }};
}

Key size_key(std::string name, std::size_t ExperimentConfig::*field) {
  return {name,
          [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*field = static_cast<std::size_t>(to_u64(k, v));
          },
          [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
}

Key dbl_key(std::string name, double ExperimentConfig::*field) {
  return num_key(std::move(name), field, 0);
}

Key phantom_dbl(std::string name, std::function<double&(synth::PhantomParams&)> ref) {
  return {name,
          [ref](ExperimentConfig& c, const std::string& k, const std::string& v) {
            ref(c.phantom) = to_double(k, v);
          },
          [ref](const ExperimentConfig& c) {
            auto p = c.phantom;
            return fmt_double(ref(p));
          }};
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t;
    t.push_back({"experiment",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   const auto n = to_u64(k, v);
                   if (n < 1 || n > 4) bad(k, v, "1, 2, 3 or 4");
                   c.experiment = static_cast<int>(n);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.experiment); }});
    t.push_back({"scale",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "desk") c.scale = Scale::Desk;
                   else if (v == "paper") c.scale = Scale::Paper;
                   else bad(k, v, "desk or paper");
                 },
                 [](const ExperimentConfig& c) { return std::string(scale_name(c.scale)); }});
    t.push_back({"seed",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); },
                 [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
    t.push_back({"kinds",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.kinds.clear();
                   if (v == "default") return;
                   for (const auto& tok : split(v, ',')) {
                     try {
                       c.kinds.push_back(arch::parse_kind(tok));
                     } catch (const std::exception&) {
                       bad(k, tok, "default or a list of U2D, U2D_CLSTM_S, U2D_CLSTM_D, U3D, CLSTM_D");
                     }
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return c.kinds.empty() ? std::string("default")
                                          : join(c.kinds, [](arch::Kind k) { return std::string(arch::kind_name(k)); });
                 }});
    t.push_back({"loss",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "default") {
                     c.loss.reset();
                     return;
                   }
                   try {
                     c.loss = loss::parse_loss(v);
                   } catch (const std::exception&) {
                     bad(k, v, "default, bce, wbce or dice");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return c.loss ? std::string(loss::loss_name(*c.loss)) : std::string("default");
                 }});
    t.push_back({"channels",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.channels.clear();
                   for (const auto& tok : split(v, ',')) c.channels.push_back(static_cast<std::size_t>(to_u64(k, tok)));
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.channels, [](std::size_t n) { return std::to_string(n); });
                 }});
    t.push_back(size_key("clstm_filters", &ExperimentConfig::clstm_filters));
    t.push_back(size_key("epochs", &ExperimentConfig::epochs));
    t.push_back(size_key("batch_size", &ExperimentConfig::batch_size));
    t.push_back(dbl_key("lr", &ExperimentConfig::lr));
    t.push_back({"train_mode",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "end_to_end") c.train_mode = TrainMode::EndToEnd;
                   else if (v == "split") c.train_mode = TrainMode::Split;
                   else bad(k, v, "end_to_end or split");
                 },
                 [](const ExperimentConfig& c) { return std::string(mode_name(c.train_mode)); }});
    t.push_back(size_key("finetune_epochs", &ExperimentConfig::finetune_epochs));
    t.push_back(size_key("train_volumes", &ExperimentConfig::train_volumes));
    t.push_back(size_key("test_volumes", &ExperimentConfig::test_volumes));
    t.push_back(dbl_key("val_fraction", &ExperimentConfig::val_fraction));
    t.push_back({"volume_dims",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.volume_dims = to_dims(k, v); },
                 [](const ExperimentConfig& c) { return dims_text(c.volume_dims); }});
    t.push_back({"tile_dims",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.tile_dims = to_dims(k, v); },
                 [](const ExperimentConfig& c) { return dims_text(c.tile_dims); }});
    t.push_back(dbl_key("overlap", &ExperimentConfig::overlap));
    t.push_back({"spacing",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   auto parts = split(v, ',');
                   if (parts.size() != 3) bad(k, v, "three comma-separated spacings in um");
                   for (int a = 0; a < 3; ++a) c.spacing[a] = to_double(k, parts[a]);
                 },
                 [](const ExperimentConfig& c) {
                   return fmt_double(c.spacing[0]) + "," + fmt_double(c.spacing[1]) + "," +
                          fmt_double(c.spacing[2]);
                 }});
    t.push_back({"thresholds",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.thresholds.clear();
                   for (const auto& tok : split(v, ',')) c.thresholds.push_back(to_double(k, tok));
                 },
                 [](const ExperimentConfig& c) { return join(c.thresholds, fmt_double); }});
    t.push_back({"tune_metric",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "auto") c.tune_metric = TuneMetric::Auto;
                   else if (v == "coverage") c.tune_metric = TuneMetric::Coverage;
                   else if (v == "skeleton_error") c.tune_metric = TuneMetric::SkeletonError;
                   else if (v == "dice") c.tune_metric = TuneMetric::Dice;
                   else bad(k, v, "auto, coverage, skeleton_error or dice");
                 },
                 [](const ExperimentConfig& c) { return std::string(metric_name(c.tune_metric)); }});
    t.push_back(dbl_key("sigma_um", &ExperimentConfig::sigma_um));
    t.push_back(dbl_key("min_branch_um", &ExperimentConfig::min_branch_um));
    t.push_back(dbl_key("coverage_radius_um", &ExperimentConfig::coverage_radius_um));
    t.push_back({"n_vessels",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.phantom.n_vessels = static_cast<std::size_t>(to_u64(k, v));
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.phantom.n_vessels); }});
    t.push_back(phantom_dbl("radius_min_um", [](synth::PhantomParams& p) -> double& { return p.radius_range_um[0]; }));
    t.push_back(phantom_dbl("radius_max_um", [](synth::PhantomParams& p) -> double& { return p.radius_range_um[1]; }));
    t.push_back(phantom_dbl("length_min_um", [](synth::PhantomParams& p) -> double& { return p.length_range_um[0]; }));
    t.push_back(phantom_dbl("length_max_um", [](synth::PhantomParams& p) -> double& { return p.length_range_um[1]; }));
    t.push_back(phantom_dbl("step_um", [](synth::PhantomParams& p) -> double& { return p.step_um; }));
    t.push_back(phantom_dbl("persistence", [](synth::PhantomParams& p) -> double& { return p.persistence; }));
    t.push_back(phantom_dbl("branch_probability", [](synth::PhantomParams& p) -> double& { return p.branch_probability; }));
    t.push_back(phantom_dbl("sigma1_um", [](synth::PhantomParams& p) -> double& { return p.sigma1_um; }));
    t.push_back(phantom_dbl("sigma2_um", [](synth::PhantomParams& p) -> double& { return p.sigma2_um; }));
    t.push_back(phantom_dbl("noise_gaussian_sd", [](synth::PhantomParams& p) -> double& { return p.noise.gaussian_sd; }));
    t.push_back(phantom_dbl("noise_snp_fraction", [](synth::PhantomParams& p) -> double& { return p.noise.snp_fraction; }));
    t.push_back(phantom_dbl("noise_poisson_scale", [](synth::PhantomParams& p) -> double& { return p.noise.poisson_scale; }));
    t.push_back({"jitter_vox",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.phantom.jitter_max_vox = static_cast<long>(to_u64(k, v));
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.phantom.jitter_max_vox); }});
    t.push_back({"record_runtime",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   if (v == "true" || v == "1") c.record_runtime = true;
                   else if (v == "false" || v == "0") c.record_runtime = false;
                   else bad(k, v, "true or false");
                 },
                 [](const ExperimentConfig& c) { return std::string(c.record_runtime ? "true" : "false"); }});
    return t;
  }();
  return table;
}

// Dense at the low end: weighted losses with a small beta leave centreline
// probabilities well below 0.05.
std::vector<double> default_thresholds() {
  std::vector<double> g{0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1};
  for (int k = 3; k < 20; ++k) g.push_back(k / 20.0);
  return g;
}

}  // namespace

// ---- configuration ----------------------------------------------------------------

ExperimentConfig ExperimentConfig::preset(int experiment, Scale scale) {
  ExperimentConfig c;
  c.experiment = experiment;
  c.scale = scale;
  c.thresholds = default_thresholds();
  if (scale == Scale::Desk) {
    // a few hundred optimiser steps per cell; 1e-4 barely leaves the prior
    c.epochs = 40;
    c.lr = 1e-3;
  } else {
    c.channels = {16, 32, 64};
    c.clstm_filters = 0;
    c.volume_dims = {512, 512, 40};
    c.tile_dims = {128, 128, 16};
  }
  return c;
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : key_table()) {
    if (k.name == key) {
      k.set(*this, key, trim(value));
      return;
    }
  }
  std::string known;
  for (const auto& k : key_table()) known += (known.empty() ? "" : ", ") + k.name;
  throw ConfigError("unknown config key '" + key + "' (known keys: " + known + ")");
}

void ExperimentConfig::apply(const io::ConfigMap& values) {
  // experiment and scale first so the preset they imply does not clobber the rest
  for (const char* first : {"experiment", "scale"}) {
    if (auto it = values.find(first); it != values.end()) set(first, it->second.value);
  }
  for (const auto& [k, v] : values) {
    if (k == "experiment" || k == "scale") continue;
    set(k, v.value);
  }
}

std::size_t ExperimentConfig::val_volume_count() const {
  const double raw = std::round(val_fraction * static_cast<double>(train_volumes));
  return std::max<std::size_t>(1, static_cast<std::size_t>(raw));
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("config key '" + key + "': " + why);
  };
  if (experiment < 1 || experiment > 4) fail("experiment", "must be 1, 2, 3 or 4");
  if (channels.empty()) fail("channels", "needs at least one level");
  for (auto c : channels)
    if (c == 0) fail("channels", "entries must be positive");
  if (epochs == 0) fail("epochs", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction", "must lie in (0, 1)");
  if (train_volumes < 2) fail("train_volumes", "needs at least 2 (one is held out)");
  if (val_volume_count() >= train_volumes) fail("val_fraction", "leaves no training volumes");
  if (test_volumes == 0) fail("test_volumes", "must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) fail("overlap", "must lie in [0, 1)");
  for (int a = 0; a < 3; ++a) {
    if (volume_dims[a] == 0) fail("volume_dims", "extents must be positive");
    if (tile_dims[a] == 0 || tile_dims[a] > volume_dims[a]) fail("tile_dims", "must fit inside volume_dims");
    if (!(spacing[a] > 0.0)) fail("spacing", "must be positive");
  }
  if (thresholds.empty()) fail("thresholds", "needs at least one value");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) fail("thresholds", "values must lie in (0, 1)");
    if (i && !(thresholds[i] > thresholds[i - 1])) fail("thresholds", "must be strictly ascending");
  }
  if (!(sigma_um > 0.0)) fail("sigma_um", "must be positive");
  if (!(min_branch_um >= 0.0)) fail("min_branch_um", "must be >= 0");
  if (!(coverage_radius_um >= 0.0)) fail("coverage_radius_um", "must be >= 0");
  try {
    phantom.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& k : key_table()) {
    if (k.name == "record_runtime") continue;  // does not change results
    out += k.name + "=" + k.get(*this) + "\n";
  }
  return out;
}

std::string ExperimentConfig::hash() const { return io::sha256_hex(canonical()).substr(0, 16); }

// ---- data ---------------------------------------------------------------------------

Dataset make_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  auto make = [&](const std::string& stage, std::size_t i) {
    const std::string id = stage + "/" + std::to_string(i);
    auto ph = synth::generate_phantom(cfg.phantom, cfg.volume_dims, cfg.spacing, derive_seed(cfg.seed, id));
    return Sample{id, std::move(ph.image), std::move(ph.mask), std::move(ph.skeleton), std::move(ph.graph)};
  };
  Dataset d;
  const std::size_t n_val = cfg.val_volume_count();
  for (std::size_t i = 0; i < cfg.train_volumes; ++i) {
    (i + n_val < cfg.train_volumes ? d.train : d.val).push_back(make("train", i));
  }
  for (std::size_t i = 0; i < cfg.test_volumes; ++i) d.test.push_back(make("test", i));
  return d;
}

std::vector<Tile> tile_index(const std::vector<Sample>& volumes, const Index3& volume_dims,
                             const Index3& tile_dims, double overlap) {
  std::vector<Tile> out;
  const auto origins = tile_origins(volume_dims, tile_dims, overlap);
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    if (volumes[v].image.dims != volume_dims) {
      throw std::invalid_argument("tile_index: volume " + volumes[v].id + " has dims " +
                                  dims_str(volumes[v].image.dims) + ", expected " + dims_str(volume_dims));
    }
    for (const auto& o : origins) out.push_back({v, o});
  }
  return out;
}

Volume slice_skeletons(const Volume& mask) { return thin2d(mask); }

const Volume& target_of(const Sample& s, Target t) {
  switch (t) {
    case Target::Mask: return s.mask;
    case Target::Skeleton: return s.skeleton;
    case Target::Skeleton2D: break;
  }
  throw std::logic_error("target_of: 2D skeletons are derived on the fly");
}

// ---- training ---------------------------------------------------------------------

namespace {

struct Split {
  std::vector<Volume> targets;
  std::vector<Volume> weights;  // empty unless weighted BCE
  std::vector<Tile> tiles;
};

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<nn::BatchNormParams> bn;
};

Snapshot take(arch::Network& net) {
  Snapshot s;
  for (const auto& p : net.parameters()) s.params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  for (auto& b : net.batchnorms()) s.bn.push_back(*b.params);
  return s;
}

void restore(arch::Network& net, const Snapshot& s) {
  auto ps = net.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto d = ps[i].tensor.mutable_data();
    std::copy(s.params[i].begin(), s.params[i].end(), d.begin());
  }
  auto bns = net.batchnorms();
  for (std::size_t i = 0; i < bns.size(); ++i) {
    bns[i].params->running_mean = s.bn[i].running_mean;
    bns[i].params->running_var = s.bn[i].running_var;
    bns[i].params->batches_tracked = s.bn[i].batches_tracked;
  }
}

Tensor stack(const std::vector<const Volume*>& vols, const std::vector<Tile>& tiles,
             const std::vector<std::size_t>& pick, const Index3& td) {
  const std::size_t per = td[0] * td[1] * td[2];
  std::vector<double> data;
  data.reserve(pick.size() * per);
  for (std::size_t i : pick) {
    const Volume c = crop(*vols[tiles[i].volume], tiles[i].origin, td);
    data.insert(data.end(), c.data.begin(), c.data.end());
  }
  return Tensor::from({pick.size(), 1, td[2], td[1], td[0]}, std::move(data));
}

Tensor loss_of(loss::LossKind kind, const Tensor& out, const Tensor& y, const Tensor* w) {
  switch (kind) {
    case loss::LossKind::Bce: return loss::bce(out, y);
    case loss::LossKind::Wbce: return loss::weighted_bce(out, y, *w);
    case loss::LossKind::Dice: return loss::dice(out, y, 1.0);
  }
  throw std::logic_error("unknown loss");
}

// Logged loss: sums become per-voxel means so curves compare across batch sizes.
double per_voxel(loss::LossKind kind, double value, std::size_t voxels) {
  return kind == loss::LossKind::Dice ? value : value / static_cast<double>(voxels);
}

Split prepare(const std::vector<Sample>& vols, const TrainOptions& opt, double beta) {
  Split s;
  for (const auto& v : vols) {
    s.targets.push_back(opt.target == Target::Skeleton2D ? slice_skeletons(v.mask) : target_of(v, opt.target));
    if (opt.loss == loss::LossKind::Wbce) s.weights.push_back(loss::weight_map(s.targets.back(), beta, opt.sigma_um));
  }
  if (!vols.empty()) s.tiles = tile_index(vols, vols.front().image.dims, opt.tile_dims, opt.overlap);
  return s;
}

std::vector<const Volume*> images_of(const std::vector<Sample>& v) {
  std::vector<const Volume*> out;
  for (const auto& s : v) out.push_back(&s.image);
  return out;
}

std::vector<const Volume*> ptrs(const std::vector<Volume>& v) {
  std::vector<const Volume*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace

TrainReport train(arch::Network& net, const Dataset& data, const TrainOptions& opt) {
  if (data.train.empty()) throw std::invalid_argument("train: no training volumes");
  if (opt.batch_size == 0 || opt.epochs == 0) throw std::invalid_argument("train: epochs and batch_size must be positive");
  using Part = TrainOptions::Part;
  if (opt.part != Part::Full && !(arch::has_cnn(net.spec().kind) && arch::has_head(net.spec().kind))) {
    throw std::invalid_argument("train: partial training needs a CNN + ConvLSTM network");
  }

  std::vector<Volume> train_targets;
  for (const auto& s : data.train)
    train_targets.push_back(opt.target == Target::Skeleton2D ? slice_skeletons(s.mask) : target_of(s, opt.target));
  const double beta = loss::class_balance(ptrs(train_targets));
  const Split tr = prepare(data.train, opt, beta);
  const Split va = prepare(data.val, opt, beta);
  const auto tr_img = images_of(data.train), va_img = images_of(data.val);

  auto params = opt.part == Part::Full ? net.parameters()
                : opt.part == Part::Cnn ? net.cnn_parameters()
                                        : net.head_parameters();
  loss::AdamConfig acfg;
  acfg.lr = opt.lr;
  loss::Adam adam(params, acfg);

  auto forward = [&](const Tensor& x, nn::Mode mode) {
    switch (opt.part) {
      case Part::Full: return net.forward(x, mode);
      case Part::Cnn: return net.cnn_forward(x, mode);
      case Part::HeadOnFrozenCnn: {
        Tensor inter;
        {
          NoGradGuard ng;
          inter = net.cnn_forward(x, nn::Mode::Eval);
        }
        return net.head_forward(inter, mode);
      }
    }
    throw std::logic_error("unknown part");
  };

  auto batches = [&](std::size_t n, std::vector<std::size_t> order) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += opt.batch_size)
      out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + opt.batch_size));
    return out;
  };

  Rng shuffle = stream(opt.seed, "shuffle/" + opt.phase);
  TrainReport rep;
  Snapshot best;
  bool have_best = false;
  std::vector<std::size_t> order(tr.tiles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double sum = 0.0;
    std::size_t count = 0, step = 0;
    for (const auto& pick : batches(order.size(), order)) {
      ++step;
      const Tensor x = stack(tr_img, tr.tiles, pick, opt.tile_dims);
      const Tensor y = stack(ptrs(tr.targets), tr.tiles, pick, opt.tile_dims);
      Tensor w;
      if (!tr.weights.empty()) w = stack(ptrs(tr.weights), tr.tiles, pick, opt.tile_dims);
      const Tensor out = forward(x, nn::Mode::Train);
      const Tensor l = loss_of(opt.loss, out, y, tr.weights.empty() ? nullptr : &w);
      const double lv = l.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error("training diverged: non-finite loss at " + opt.phase + " epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step));
      }
      backward(l);
      adam.step();
      ++rep.steps;
      sum += per_voxel(opt.loss, lv, y.numel()) * (opt.loss == loss::LossKind::Dice ? 1.0 : double(pick.size()));
      count += pick.size();
    }
    const double train_loss = opt.loss == loss::LossKind::Dice ? sum / double(step) : sum / double(count);

    double val_loss = train_loss;
    if (!va.tiles.empty()) {
      NoGradGuard ng;
      std::vector<std::size_t> all(va.tiles.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      double vs = 0.0;
      std::size_t vn = 0, vb = 0;
      for (const auto& pick : batches(all.size(), all)) {
        const Tensor x = stack(va_img, va.tiles, pick, opt.tile_dims);
        const Tensor y = stack(ptrs(va.targets), va.tiles, pick, opt.tile_dims);
        Tensor w;
        if (!va.weights.empty()) w = stack(ptrs(va.weights), va.tiles, pick, opt.tile_dims);
        const Tensor out = forward(x, nn::Mode::Eval);
        const double lv = loss_of(opt.loss, out, y, va.weights.empty() ? nullptr : &w).item();
        vs += opt.loss == loss::LossKind::Dice ? lv : lv / double(y.numel()) * double(pick.size());
        vn += pick.size();
        ++vb;
      }
      val_loss = opt.loss == loss::LossKind::Dice ? vs / double(vb) : vs / double(vn);
    }
    rep.curve.push_back({epoch, opt.phase, train_loss, val_loss});
    spdlog::info("{} epoch {}/{}: train {:.6g} val {:.6g}", opt.phase, epoch, opt.epochs, train_loss, val_loss);
    if (!have_best || val_loss < rep.best_val_loss) {
      have_best = true;
      rep.best_val_loss = val_loss;
      rep.best_epoch = epoch;
      best = take(net);
    }
  }
  restore(net, best);
  return rep;
}

TrainReport train_split(arch::Network& net, const Dataset& data, const TrainOptions& opt,
                        std::size_t finetune_epochs) {
  using Part = TrainOptions::Part;
  TrainReport all;
  auto append = [&](const TrainReport& r) {
    all.curve.insert(all.curve.end(), r.curve.begin(), r.curve.end());
    all.steps += r.steps;
    all.best_epoch = r.best_epoch;
    all.best_val_loss = r.best_val_loss;
    all.val_gradient_tiles += r.val_gradient_tiles;
  };
  TrainOptions p1 = opt;
  p1.part = Part::Cnn;
  p1.target = Target::Skeleton2D;
  p1.phase = "cnn";
  append(train(net, data, p1));

  TrainOptions p2 = opt;
  p2.part = Part::HeadOnFrozenCnn;
  p2.phase = "head";
  append(train(net, data, p2));

  if (finetune_epochs > 0) {
    TrainOptions p3 = opt;
    p3.part = Part::Full;
    p3.phase = "finetune";
    p3.epochs = finetune_epochs;
    append(train(net, data, p3));
  }
  return all;
}

// ---- inference and evaluation ---------------------------------------------------

Volume predict(arch::Network& net, const Volume& image) {
  const std::size_t div = net.spec().divisor();
  const std::size_t zdiv = net.spec().kind == arch::Kind::U3D ? div : 1;
  const Volume padded = pad_to_multiple(image, {div, div, zdiv});
  Tensor x = Tensor::from({1, 1, padded.nz(), padded.ny(), padded.nx()}, padded.data);
  Tensor y;
  {
    NoGradGuard ng;
    y = net.forward(x, nn::Mode::Eval);
  }
  Volume full(padded.dims, image.spacing, VolumeKind::Intensity);
  const auto d = y.data();
  std::copy(d.begin(), d.end(), full.data.begin());
  Volume out = crop(full, {0, 0, 0}, image.dims);
  out.kind = VolumeKind::Intensity;
  return out;
}

std::optional<double> threshold_score(const std::vector<Volume>& predictions,
                                      const std::vector<const Sample*>& truth, TuneMetric metric,
                                      double threshold, double min_branch_um,
                                      double coverage_radius_um) {
  if (predictions.size() != truth.size() || predictions.empty()) {
    throw std::invalid_argument("threshold_score: need one prediction per truth volume");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (metric == TuneMetric::Dice) {
      Volume bin(predictions[i].dims, predictions[i].spacing, VolumeKind::Mask);
      std::size_t on = 0;
      for (std::size_t k = 0; k < bin.size(); ++k) on += (bin.data[k] = predictions[i].data[k] >= threshold) != 0.0;
      if (on == 0) return std::nullopt;
      sum += metrics::dice_score(bin, truth[i]->mask);
      continue;
    }
    const Volume sk = binarize_and_skeletonize(predictions[i], threshold, min_branch_um);
    const auto pred = metrics::points_of(sk);
    if (pred.empty()) return std::nullopt;
    const auto gt = metrics::points_of(truth[i]->skeleton);
    sum += metric == TuneMetric::Coverage ? metrics::coverage(gt, pred, coverage_radius_um)
                                          : metrics::mhd(gt, pred);
  }
  return sum / static_cast<double>(predictions.size());
}

TuneResult tune_threshold(const std::vector<Volume>& predictions, const std::vector<const Sample*>& truth,
                          TuneMetric metric, const std::vector<double>& grid, double min_branch_um,
                          double coverage_radius_um) {
  if (grid.empty()) throw std::invalid_argument("tune_threshold: empty threshold grid");
  if (metric == TuneMetric::Auto) throw std::invalid_argument("tune_threshold: resolve the metric first");
  const bool lower_better = metric == TuneMetric::SkeletonError;
  TuneResult r;
  bool found = false;
  for (double t : grid) {
    const auto s = threshold_score(predictions, truth, metric, t, min_branch_um, coverage_radius_um);
    r.scores.push_back(s);
    if (!s) continue;
    const bool better = !found || (lower_better ? *s < r.score : *s > r.score);
    if (better) {
      found = true;
      r.score = *s;
      r.threshold = t;
    }
  }
  if (!found) {
    throw TuneError("every threshold gives an empty prediction on the validation volumes; the "
                    "network did not learn the target (retrain with another loss or more epochs)");
  }
  return r;
}

Evaluation evaluate(const std::vector<Volume>& predictions, const std::vector<const Sample*>& truth,
                    double threshold, bool segmentation, double min_branch_um,
                    double coverage_radius_um) {
  Evaluation ev;
  double dice = 0, err = 0, cov = 0, node = 0;
  std::size_t n_err = 0, n_node = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (segmentation) {
      Volume bin(predictions[i].dims, predictions[i].spacing, VolumeKind::Mask);
      for (std::size_t k = 0; k < bin.size(); ++k) bin.data[k] = predictions[i].data[k] >= threshold;
      dice += metrics::dice_score(bin, truth[i]->mask);
      continue;
    }
    const Volume sk = binarize_and_skeletonize(predictions[i], threshold, min_branch_um);
    const auto pred = metrics::points_of(sk);
    const auto gt = metrics::points_of(truth[i]->skeleton);
    cov += pred.empty() ? 0.0 : metrics::coverage(gt, pred, coverage_radius_um);
    if (pred.empty()) {
      ++ev.empty_volumes;
      continue;
    }
    err += metrics::mhd(gt, pred);
    ++n_err;
    try {
      node += metrics::node_distance(truth[i]->graph, to_graph(sk));
      ++n_node;
    } catch (const std::invalid_argument&) {
      // no endpoints or junctions on one side; left out of the mean
    }
  }
  const double n = static_cast<double>(predictions.size());
  if (segmentation) {
    ev.dice = dice / n;
    return ev;
  }
  ev.coverage = cov / n;
  if (n_err) ev.skeleton_error_um = err / double(n_err);
  if (n_node) ev.node_distance_um = node / double(n_node);
  return ev;
}

// ---- experiments --------------------------------------------------------------------

std::string results_header() {
  return "experiment\tarchitecture\tloss\tthreshold\tdice\tskeleton_error_um\tcoverage\t"
         "node_distance_um\tstatus\tconfig_hash\truntime_s\n";
}

std::string format_row(const ResultRow& r) {
  auto num = [](const std::optional<double>& v, const char* f) {
    if (!v) return std::string("-");
    char buf[48];
    std::snprintf(buf, sizeof buf, f, *v);
    return std::string(buf);
  };
  return std::to_string(r.experiment) + "\t" + r.architecture + "\t" + r.loss + "\t" +
         num(r.threshold, "%.2f") + "\t" + num(r.dice, "%.4f") + "\t" + num(r.skeleton_error_um, "%.4f") +
         "\t" + num(r.coverage, "%.4f") + "\t" + num(r.node_distance_um, "%.4f") + "\t" + r.status + "\t" +
         r.config_hash + "\t" + num(r.runtime_s, "%.1f") + "\n";
}

namespace {

struct Cell {
  std::string label;  // architecture column
  std::string tag;    // file stem
  arch::NetworkSpec spec;
  loss::LossKind loss;
  bool segmentation;
};

std::vector<Cell> cells_of(const ExperimentConfig& cfg) {
  using arch::Kind;
  auto spec_for = [&](Kind k) {
    arch::NetworkSpec s;
    s.kind = k;
    s.channels = cfg.channels;
    s.clstm_filters = cfg.clstm_filters;
    s.seed = derive_seed(cfg.seed, "init");
    return s;
  };
  auto tag = [](std::string s) {
    for (char& c : s)
      if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return s;
  };
  std::vector<Cell> out;
  switch (cfg.experiment) {
    case 1:
    case 2: {
      std::vector<Kind> kinds = cfg.kinds;
      if (kinds.empty()) {
        kinds = cfg.experiment == 1
                    ? std::vector<Kind>{Kind::U2D, Kind::U2D_CLSTM_D, Kind::CLSTM_D, Kind::U3D}
                    : std::vector<Kind>{Kind::U2D, Kind::U2D_CLSTM_D, Kind::U2D_CLSTM_S, Kind::U3D, Kind::CLSTM_D};
      }
      const auto l = cfg.loss.value_or(cfg.experiment == 1 ? loss::LossKind::Dice : loss::LossKind::Wbce);
      for (Kind k : kinds) {
        out.push_back({std::string(arch::kind_label(k)), tag(std::string(arch::kind_name(k))), spec_for(k), l,
                       cfg.experiment == 1});
      }
      break;
    }
    case 3: {
      const Kind k = cfg.kinds.empty() ? Kind::U2D_CLSTM_S : cfg.kinds.front();
      if (!arch::has_head(k)) throw ConfigError("config key 'kinds': experiment 3 needs a ConvLSTM network");
      const auto l = cfg.loss.value_or(loss::LossKind::Wbce);
      for (bool bi : {true, false}) {
        auto s = spec_for(k);
        s.bidirectional = bi;
        out.push_back({bi ? "Bidirectional" : "Unidirectional",
                       tag(std::string(arch::kind_name(k))) + (bi ? "_bi" : "_uni"), s, l, false});
      }
      break;
    }
    case 4: {
      const Kind k = cfg.kinds.empty() ? Kind::U2D_CLSTM_S : cfg.kinds.front();
      for (auto l : {loss::LossKind::Bce, loss::LossKind::Wbce, loss::LossKind::Dice}) {
        out.push_back({std::string(arch::kind_label(k)),
                       tag(std::string(arch::kind_name(k))) + "_" + std::string(loss::loss_name(l)), spec_for(k),
                       l, false});
      }
      break;
    }
    default: throw ConfigError("config key 'experiment': must be 1, 2, 3 or 4");
  }
  return out;
}

std::string curve_text(const TrainReport& r) {
  std::string out = "epoch\tphase\ttrain_loss\tval_loss\n";
  char buf[128];
  for (const auto& e : r.curve) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.9g\t%.9g\n", e.epoch, e.phase.c_str(), e.train_loss, e.val_loss);
    out += buf;
  }
  return out;
}

}  // namespace

std::vector<CellInfo> experiment_cells(const ExperimentConfig& cfg) {
  std::vector<CellInfo> out;
  for (const auto& c : cells_of(cfg)) out.push_back({c.label, std::string(loss::loss_label(c.loss)), c.tag});
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                const std::string& command) {
  cfg.validate();
  const auto cells = cells_of(cfg);
  fs::create_directories(out_dir / "curves");
  fs::create_directories(out_dir / "checkpoints");
  const std::string hash = cfg.hash();
  spdlog::info("experiment {} ({} cells, config {})", cfg.experiment, cells.size(), hash);
  const Dataset data = make_dataset(cfg);

  std::vector<const Sample*> val_truth, test_truth;
  for (const auto& s : data.val) val_truth.push_back(&s);
  for (const auto& s : data.test) test_truth.push_back(&s);
  const TuneMetric metric = cfg.tune_metric != TuneMetric::Auto ? cfg.tune_metric
                            : cfg.experiment == 1               ? TuneMetric::Dice
                                                                : TuneMetric::SkeletonError;

  ExperimentResult res;
  for (const auto& cell : cells) {
    const auto t0 = std::chrono::steady_clock::now();
    ResultRow row;
    row.experiment = cfg.experiment;
    row.architecture = cell.label;
    row.loss = std::string(loss::loss_label(cell.loss));
    row.config_hash = hash;
    spdlog::info("cell {} / {}", cell.label, row.loss);
    try {
      arch::Network net(cell.spec);
      TrainOptions opt;
      opt.loss = cell.loss;
      opt.target = cell.segmentation ? Target::Mask : Target::Skeleton;
      opt.epochs = cfg.epochs;
      opt.batch_size = cfg.batch_size;
      opt.lr = cfg.lr;
      opt.tile_dims = cfg.tile_dims;
      opt.overlap = cfg.overlap;
      opt.sigma_um = cfg.sigma_um;
      opt.seed = cfg.seed;
      const bool split = cfg.train_mode == TrainMode::Split && arch::has_cnn(cell.spec.kind) &&
                         arch::has_head(cell.spec.kind) && !cell.segmentation;
      const TrainReport rep = split ? train_split(net, data, opt, cfg.finetune_epochs) : train(net, data, opt);

      const fs::path curve = out_dir / "curves" / (cell.tag + ".tsv");
      io::write_text(curve, curve_text(rep));
      res.outputs.push_back(curve);
      const fs::path ckpt = out_dir / "checkpoints" / (cell.tag + ".vckpt");
      io::write_checkpoint(ckpt, net);
      res.outputs.push_back(ckpt);

      std::vector<Volume> val_pred, test_pred;
      for (const auto& s : data.val) val_pred.push_back(predict(net, s.image));
      for (const auto& s : data.test) test_pred.push_back(predict(net, s.image));
      try {
        const auto tuned = tune_threshold(val_pred, val_truth, metric, cfg.thresholds, cfg.min_branch_um,
                                          cfg.coverage_radius_um);
        row.threshold = tuned.threshold;
        const auto ev = evaluate(test_pred, test_truth, tuned.threshold, cell.segmentation, cfg.min_branch_um,
                                 cfg.coverage_radius_um);
        row.dice = ev.dice;
        row.skeleton_error_um = ev.skeleton_error_um;
        row.coverage = ev.coverage;
        row.node_distance_um = ev.node_distance_um;
        if (ev.empty_volumes) row.status = ev.empty_volumes == test_pred.size() ? "n/a" : "partial";
      } catch (const TuneError& e) {
        spdlog::warn("{} / {}: {}", cell.label, row.loss, e.what());
        row.status = "n/a";
      }
    } catch (const std::exception& e) {
      spdlog::error("{} / {} failed: {}", cell.label, row.loss, e.what());
      row.status = "failed";
    }
    if (cfg.record_runtime) {
      row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    spdlog::info("{}", format_row(row).substr(0, format_row(row).size() - 1));
    res.rows.push_back(row);
  }

  std::string table = results_header();
  for (const auto& r : res.rows) table += format_row(r);
  const fs::path results = out_dir / "results.tsv";
  io::write_text(results, table);
  res.outputs.insert(res.outputs.begin(), results);

  io::RunManifest m;
  m.command = command;
  m.config = cfg.canonical();
  m.seed = cfg.seed;
  m.outputs = io::hash_files(res.outputs, out_dir);
  res.outputs.push_back(io::write_manifest(out_dir, m));
  return res;
}

}  // namespace vskel::harness

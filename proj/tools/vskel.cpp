// vskel: synthetic data, training, inference, skeletonization, evaluation and
// the experiment driver.
//
// Exit codes: 0 success, 1 usage, 2 validation (bad config or inputs),
// 3 runtime failure.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vskel/gradcheck.hpp"
#include "vskel/graph.hpp"
#include "vskel/harness.hpp"
#include "vskel/io.hpp"
#include "vskel/metrics.hpp"
#include "vskel/skeleton.hpp"
#include "vskel/synthgen.hpp"

namespace fs = std::filesystem;
using namespace vskel;
using harness::ExperimentConfig;

namespace {

enum Exit { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", file, "key=value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one config key (key=value); repeatable");
    app->add_option("--seed", seed, "master seed");
  }

  // File keys first, then --set, then --seed; nothing is written before this returns.
  ExperimentConfig load(ExperimentConfig cfg) const {
    io::ConfigMap values;
    if (!file.empty()) values = io::parse_config(io::read_text(file), file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
      values[s.substr(0, eq)] = {s.substr(eq + 1), 0};
    }
    cfg.apply(values);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }

  std::vector<fs::path> inputs() const {
    return file.empty() ? std::vector<fs::path>{} : std::vector<fs::path>{file};
  }
};

// Echoed into manifests. The output directory is left out so that equal runs
// into different directories give equal manifests.
std::string command_line(int argc, char** argv) {
  std::string out = "vskel";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out") {
      ++i;
      continue;
    }
    if (a.starts_with("--out=")) continue;
    out += " " + a;
  }
  return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig* cfg,
                    std::uint64_t seed, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
  io::RunManifest m;
  m.command = command;
  if (cfg) m.config = cfg->canonical();
  m.seed = seed;
  m.inputs = io::hash_files(inputs, dir);
  m.outputs = io::hash_files(outputs, dir);
  io::write_manifest(dir, m);
}

std::string stem_of(const fs::path& p) {
  std::string s = p.stem().string();
  for (const char* suffix : {"_image", "_prob"}) {
    const std::string suf = suffix;
    if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
      return s.substr(0, s.size() - suf.size());
    }
  }
  return s;
}

// Reads a generated dataset directory (<id>_image.vvol, <id>_mask.vvol,
// <id>_skeleton.vvol, <id>.swc) in id order.
std::vector<harness::Sample> load_samples(const fs::path& root, std::vector<fs::path>& inputs) {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = "_image.vvol";
    if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  if (ids.empty()) throw ValidationError("no *_image.vvol volumes in " + root.string());
  std::vector<harness::Sample> out;
  for (const auto& id : ids) {
    harness::Sample s;
    s.id = id;
    const fs::path img = root / (id + "_image.vvol"), mask = root / (id + "_mask.vvol"),
                   skel = root / (id + "_skeleton.vvol"), swc = root / (id + ".swc");
    s.image = io::read_vvol(img);
    s.mask = io::read_vvol(mask);
    s.skeleton = io::read_vvol(skel);
    s.graph = from_swc(io::read_text(swc));
    if (s.image.dims != s.mask.dims || s.image.dims != s.skeleton.dims) {
      throw ValidationError(id + ": image " + io::read_vvol_header(img).describe() + " vs mask " +
                            io::read_vvol_header(mask).describe() + " vs skeleton " +
                            io::read_vvol_header(skel).describe());
    }
    for (const auto& p : {img, mask, skel, swc}) inputs.push_back(p);
    out.push_back(std::move(s));
  }
  return out;
}

metrics::PointSet points_from(const fs::path& p) {
  if (p.extension() == ".swc") {
    const SkeletonGraph g = from_swc(io::read_text(p));
    std::vector<Point> pts;
    for (const auto& n : g.nodes) pts.push_back(n.pos);
    for (const auto& e : g.edges) pts.insert(pts.end(), e.polyline.begin(), e.polyline.end());
    return metrics::PointSet(std::move(pts));
  }
  return metrics::points_of(io::read_vvol(p));
}

SkeletonGraph graph_from(const fs::path& p) {
  if (p.extension() == ".swc") return from_swc(io::read_text(p));
  return to_graph(io::read_vvol(p));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---- commands ----------------------------------------------------------------------

int cmd_generate(const ConfigFlags& cf, const fs::path& out, const std::string& command) {
  const ExperimentConfig cfg = cf.load(ExperimentConfig::preset(2, harness::Scale::Desk));
  synth::DatasetSpec spec;
  spec.phantom = cfg.phantom;
  spec.n_volumes = cfg.train_volumes;
  spec.volume_dims = cfg.volume_dims;
  spec.spacing = cfg.spacing;
  spec.tile_dims = cfg.tile_dims;
  spec.overlap = cfg.overlap;
  spec.seed = cfg.seed;
  fs::create_directories(out);
  const auto entries = synth::generate_dataset(spec, out);
  std::vector<fs::path> outputs;
  for (const auto& e : entries)
    for (const auto& f : {e.image, e.mask, e.skeleton, e.swc}) outputs.push_back(out / f);
  outputs.push_back(out / "tiles.tsv");
  write_manifest(out, command, &cfg, cfg.seed, cf.inputs(), outputs);
  spdlog::info("wrote {} volumes to {}", entries.size(), out.string());
  return kOk;
}

int cmd_train(const ConfigFlags& cf, const fs::path& data_dir, const std::string& kind,
              const fs::path& out, const std::string& command) {
  ExperimentConfig cfg = cf.load(ExperimentConfig::preset(2, harness::Scale::Desk));
  std::vector<fs::path> inputs = cf.inputs();
  auto samples = load_samples(data_dir, inputs);
  if (samples.size() < 2) throw ValidationError("training needs at least 2 volumes (one is held out)");
  const std::size_t n_val = std::min(samples.size() - 1, std::max<std::size_t>(1, static_cast<std::size_t>(
                                                                cfg.val_fraction * double(samples.size()) + 0.5)));
  harness::Dataset data;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (i + n_val < samples.size() ? data.train : data.val).push_back(std::move(samples[i]));

  arch::NetworkSpec spec;
  spec.kind = arch::parse_kind(kind);
  spec.channels = cfg.channels;
  spec.clstm_filters = cfg.clstm_filters;
  spec.seed = derive_seed(cfg.seed, "init");
  arch::Network net(spec);

  harness::TrainOptions opt;
  opt.loss = cfg.loss.value_or(loss::LossKind::Wbce);
  opt.target = harness::Target::Skeleton;
  opt.epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.lr = cfg.lr;
  opt.tile_dims = cfg.tile_dims;
  opt.overlap = cfg.overlap;
  opt.sigma_um = cfg.sigma_um;
  opt.seed = cfg.seed;
  const bool split = cfg.train_mode == harness::TrainMode::Split && arch::has_cnn(spec.kind) && arch::has_head(spec.kind);
  const auto rep = split ? harness::train_split(net, data, opt, cfg.finetune_epochs) : harness::train(net, data, opt);

  fs::create_directories(out);
  std::string curve = "epoch\tphase\ttrain_loss\tval_loss\n";
  char buf[128];
  for (const auto& e : rep.curve) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.9g\t%.9g\n", e.epoch, e.phase.c_str(), e.train_loss, e.val_loss);
    curve += buf;
  }
  io::write_text(out / "curve.tsv", curve);
  io::write_checkpoint(out / "model.vckpt", net);
  write_manifest(out, command, &cfg, cfg.seed, inputs, {out / "curve.tsv", out / "model.vckpt"});
  spdlog::info("best epoch {} (val loss {:.6g}); checkpoint {}", rep.best_epoch, rep.best_val_loss,
               (out / "model.vckpt").string());
  return kOk;
}

int cmd_infer(const fs::path& ckpt, const std::vector<fs::path>& inputs, const fs::path& out,
              const std::string& command) {
  arch::Network net(io::read_checkpoint_spec(ckpt));
  io::read_checkpoint(ckpt, net);
  fs::create_directories(out);
  std::vector<fs::path> outputs;
  for (const auto& in : inputs) {
    const Volume image = io::read_vvol(in);
    const Volume prob = harness::predict(net, image);
    const fs::path dst = out / (stem_of(in) + "_prob.vvol");
    io::write_vvol(dst, prob, io::DType::F32);
    outputs.push_back(dst);
  }
  std::vector<fs::path> all_inputs{ckpt};
  all_inputs.insert(all_inputs.end(), inputs.begin(), inputs.end());
  write_manifest(out, command, nullptr, 0, all_inputs, outputs);
  return kOk;
}

int cmd_skeletonize(const std::vector<fs::path>& inputs, double threshold, double min_branch,
                    const fs::path& out, const std::string& command) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("--threshold must lie in (0, 1)");
  if (!(min_branch >= 0.0)) throw ValidationError("--min-branch must be >= 0");
  fs::create_directories(out);
  std::vector<fs::path> outputs;
  for (const auto& in : inputs) {
    const Volume prob = io::read_vvol(in);
    const Volume sk = binarize_and_skeletonize(prob, threshold, min_branch);
    const fs::path vv = out / (stem_of(in) + "_skeleton.vvol"), swc = out / (stem_of(in) + ".swc");
    io::write_vvol(vv, sk, io::DType::U8);
    io::write_text(swc, to_swc(to_graph(sk)));
    outputs.push_back(vv);
    outputs.push_back(swc);
  }
  write_manifest(out, command, nullptr, 0, inputs, outputs);
  return kOk;
}

int cmd_evaluate(const std::vector<fs::path>& preds, const std::vector<fs::path>& truths, double radius,
                 const std::string& out) {
  if (preds.size() != truths.size()) throw ValidationError("--pred and --truth need the same number of files");
  std::string table = "prediction\ttruth\tdice\tskeleton_error_um\tcoverage\tnode_distance_um\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::string dice = "-";
    if (preds[i].extension() == ".vvol" && truths[i].extension() == ".vvol") {
      const auto hp = io::read_vvol_header(preds[i]), ht = io::read_vvol_header(truths[i]);
      if (hp.dims != ht.dims || hp.dtype != ht.dtype) {
        throw ValidationError("prediction and truth disagree:\n  " + preds[i].string() + ": " + hp.describe() +
                              "\n  " + truths[i].string() + ": " + ht.describe());
      }
      dice = fmt(metrics::dice_score(io::read_vvol(preds[i]), io::read_vvol(truths[i])));
    }
    const auto p = points_from(preds[i]), t = points_from(truths[i]);
    const std::string err = p.empty() || t.empty() ? "-" : fmt(metrics::mhd(t, p));
    const std::string cov = t.empty() ? "-" : fmt(metrics::coverage(t, p, radius));
    std::string node = "-";
    try {
      node = fmt(metrics::node_distance(graph_from(truths[i]), graph_from(preds[i])));
    } catch (const std::invalid_argument&) {
    }
    table += preds[i].string() + "\t" + truths[i].string() + "\t" + dice + "\t" + err + "\t" + cov + "\t" + node + "\n";
  }
  if (out.empty() || out == "-") {
    std::cout << table;
  } else {
    io::write_text(out, table);
  }
  return kOk;
}

int cmd_experiment(const ConfigFlags& cf, int id, const std::string& scale, bool record_runtime,
                   const fs::path& out_opt, const std::string& command) {
  ExperimentConfig cfg = cf.load(
      ExperimentConfig::preset(id, scale == "paper" ? harness::Scale::Paper : harness::Scale::Desk));
  if (record_runtime) cfg.record_runtime = true;
  const fs::path out = out_opt.empty() ? fs::path("results") / ("exp" + std::to_string(id) + "_" + scale) : out_opt;
  const auto res = harness::run_experiment(cfg, out, command);
  std::cout << harness::results_header();
  bool any_failed = false;
  for (const auto& r : res.rows) {
    std::cout << harness::format_row(r);
    any_failed |= r.status == "failed";
  }
  return any_failed ? kRuntime : kOk;
}

int cmd_gradcheck(unsigned seeds, double tolerance, const std::string& fault) {
  if (!fault.empty()) {
    const auto colon = fault.find(':');
    const std::string op = fault.substr(0, colon);
    const double factor = colon == std::string::npos ? 1.5 : std::stod(fault.substr(colon + 1));
    autograd::set_fault_injection(op, factor);
    spdlog::warn("fault injection: gradients into '{}' scaled by {}", op, factor);
  }
  const auto results = run_gradcheck_suite(seeds, tolerance);
  std::size_t failures = 0;
  std::printf("%-32s %-14s %-6s %s\n", "check", "max_rel_error", "seed", "status");
  for (const auto& l : summarize(results)) {
    std::printf("%-32s %-14.3e %-6u %s\n", l.check.c_str(), l.worst_rel_error, l.worst_seed,
                l.failures ? "FAIL" : "ok");
    failures += l.failures;
  }
  for (const auto& r : results)
    if (!r.passed) std::printf("failed: %s seed %u max_rel_error %.3e\n", r.check.c_str(), r.seed, r.max_rel_error);
  std::printf("%zu checks, %zu failed (tolerance %.1e)\n", results.size(), failures, tolerance);
  return failures ? kRuntime : kOk;
}

int cmd_export(const std::string& format, const fs::path& in, const fs::path& out) {
  const Volume v = io::read_vvol(in);
  if (format == "csv") {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    io::export_csv(v, out);
  } else {
    fs::create_directories(out);
    const auto files = io::export_pgm_slices(v, out, stem_of(in));
    spdlog::info("wrote {} slices to {}", files.size(), out.string());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("vskel");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  CLI::App app{"Vessel centreline extraction from anisotropic volumes"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");
  app.set_version_flag("--version", io::kToolVersion);

  ConfigFlags gen_cf, train_cf, exp_cf;
  fs::path out, data_dir, ckpt, input;
  std::vector<fs::path> inputs, preds, truths;
  std::string kind = "U2D_CLSTM_S", scale = "desk", format, fault, eval_out;
  int exp_id = 0;
  bool record_runtime = false;
  double threshold = 0.5, min_branch = kDefaultMinBranchUm, radius = metrics::kCoverageRadiusUm,
         tolerance = 1e-4;
  unsigned seeds = 10;

  auto* gen = app.add_subcommand("generate", "write a synthetic phantom dataset");
  gen_cf.add(gen);
  gen->add_option("--out", out, "output directory (created if missing)")->required();

  auto* train = app.add_subcommand("train", "train one network on a generated dataset");
  train_cf.add(train);
  train->add_option("--data", data_dir, "dataset directory from 'generate'")->required()->check(CLI::ExistingDirectory);
  train->add_option("--arch", kind, "U2D, U2D_CLSTM_S, U2D_CLSTM_D, U3D or CLSTM_D");
  train->add_option("--out", out, "output directory")->required();

  auto* infer = app.add_subcommand("infer", "probability map per input volume");
  infer->add_option("--checkpoint", ckpt, "VCKPT file")->required()->check(CLI::ExistingFile);
  infer->add_option("inputs", inputs, "image VVOL files")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out, "output directory")->required();

  auto* skel = app.add_subcommand("skeletonize", "binarize, thin and prune probability maps");
  skel->add_option("inputs", inputs, "probability VVOL files")->required()->check(CLI::ExistingFile);
  skel->add_option("--threshold", threshold, "binarization threshold in (0, 1)");
  skel->add_option("--min-branch", min_branch, "prune terminal branches shorter than this (um)");
  skel->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "compare predicted and true skeletons (VVOL or SWC)");
  eval->add_option("--pred", preds, "predicted skeletons")->required()->check(CLI::ExistingFile);
  eval->add_option("--truth", truths, "true skeletons, paired with --pred")->required()->check(CLI::ExistingFile);
  eval->add_option("--radius", radius, "coverage radius (um)");
  eval->add_option("--out", eval_out, "metrics table path (default stdout)");

  auto* exp = app.add_subcommand("experiment", "run one experiment end to end");
  exp_cf.add(exp);
  exp->add_option("--id", exp_id, "experiment 1, 2, 3 or 4")->required()->check(CLI::Range(1, 4));
  exp->add_option("--scale", scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  exp->add_flag("--record-runtime", record_runtime, "fill the runtime_s column");
  exp->add_option("--out", out, "output directory (default results/exp<id>_<scale>)");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  grad->add_option("--seeds", seeds, "random draws per check");
  grad->add_option("--tolerance", tolerance, "maximum relative error");
  grad->add_option("--inject-fault", fault, "scale gradients into OP[:factor] (self-test)")->group("");

  auto* exp_cmd = app.add_subcommand("export", "export a volume for external viewers");
  exp_cmd->add_option("--format", format, "csv or pgm-slices")->required()->check(CLI::IsMember({"csv", "pgm-slices"}));
  exp_cmd->add_option("--input", input, "VVOL file")->required()->check(CLI::ExistingFile);
  exp_cmd->add_option("--out", out, "CSV file or slice directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);
  const std::string command = command_line(argc, argv);

  try {
    if (*gen) return cmd_generate(gen_cf, out, command);
    if (*train) return cmd_train(train_cf, data_dir, kind, out, command);
    if (*infer) return cmd_infer(ckpt, inputs, out, command);
    if (*skel) return cmd_skeletonize(inputs, threshold, min_branch, out, command);
    if (*eval) return cmd_evaluate(preds, truths, radius, eval_out);
    if (*exp) return cmd_experiment(exp_cf, exp_id, scale, record_runtime, out, command);
    if (*grad) return cmd_gradcheck(seeds, tolerance, fault);
    if (*exp_cmd) return cmd_export(format, input, out);
  } catch (const harness::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  } catch (const io::FormatError& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntime;
  }
  return kUsage;
}

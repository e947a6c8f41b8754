#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sapl/config.hpp"
#include "sapl/evalkit.hpp"
#include "sapl/pipeline.hpp"
#include "sapl/softedge.hpp"
#include "svg.hpp"

namespace fs = std::filesystem;
using namespace sapl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> disabled;
};

std::string dashed(std::string k) {
  for (char& c : k)
    if (c == '_') c = '-';
  return k;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  RunConfig defaults;
  for (const std::string& key : defaults.keys()) {
    if (key == "ecpl" || key == "hecl" || key == "ecpl_edge" || key == "hecl_edge") continue;
    cmd->add_option_function<std::string>("--" + dashed(key), [&c, key](const std::string& v) { c.values[key] = v; },
                                          key);
  }
  for (const char* key : {"ecpl", "hecl", "ecpl_edge", "hecl_edge"}) {
    cmd->add_flag_function("--no-" + dashed(key), [&c, key](std::int64_t) { c.values[key] = "false"; },
                           std::string("disable ") + key);
  }
}

RunConfig load_config(const Common& c) {
  std::map<std::string, std::string> file;
  if (!c.config_file.empty()) file = read_key_values(c.config_file);
  return resolve(file, c.values);
}

backbone::DualEncoder make_backbone(const RunConfig& rc) {
  const auto cfg = backbone_config(rc);
  if (rc.backbone == "toy") return backbone::DualEncoder(cfg);
  if (!fs::exists(rc.weights)) throw UsageError("weights not found: " + rc.weights.string());
  return backbone::DualEncoder::from_archive(cfg, rc.weights);
}

std::vector<corpus::Sample> load_samples(const RunConfig& rc, const fs::path& root, corpus::Layout layout) {
  if (root.empty()) throw UsageError("no dataset path given (--data)");
  if (layout == corpus::Layout::synthetic && !fs::exists(root)) {
    corpus::SyntheticCorpusOptions o;
    o.splices = rc.synthetic_splices;
    o.authentic = rc.synthetic_authentic;
    o.size = rc.synthetic_size;
    o.seed = rc.train.seed;
    corpus::write_dataset(root, corpus::synthetic_corpus(o));
    std::cerr << "generated synthetic corpus in " << root << '\n';
  }
  if (!fs::exists(root)) throw UsageError("dataset path does not exist: " + root.string());
  corpus::Dataset d = corpus::load_dataset(root, layout);
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
  return std::move(d.samples);
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

int cmd_train(const Common& c) {
  RunConfig rc = load_config(c);
  auto samples = load_samples(rc, rc.data, rc.layout);
  auto enc = make_backbone(rc);
  pipeline::Model model(enc, rc.train);
  pipeline::TrainOptions opts;
  opts.out_dir = rc.out;
  opts.manifest_extra["resolved_config"] = rc.dump();
  opts.on_epoch = [](const pipeline::EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " loss " << r.loss << " cls " << r.cls_loss << " hecl " << r.hecl_loss
              << '\n';
  };
  fs::create_directories(rc.out);
  open_out(rc.out / "config.txt") << rc.dump();
  auto res = pipeline::train(model, samples, opts);
  std::cout << "trained " << res.epochs.size() << " epochs; manifest " << res.manifest.string() << '\n';
  return 0;
}

pipeline::Model load_model(backbone::DualEncoder& enc, const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw UsageError("no checkpoint given (--checkpoint)");
  if (!fs::exists(rc.checkpoint)) throw UsageError("checkpoint not found: " + rc.checkpoint.string());
  pipeline::Model model(enc, rc.train);
  try {
    model.load(rc.checkpoint);
  } catch (const pipeline::CheckpointError& e) {
    throw UsageError(e.what());
  }
  return model;
}

int cmd_eval(const Common& c) {
  RunConfig rc = load_config(c);
  const fs::path root = rc.eval_data.empty() ? rc.data : rc.eval_data;
  const auto layout = rc.eval_data.empty() ? rc.layout : rc.eval_layout;
  auto enc = make_backbone(rc);
  pipeline::Model model = load_model(enc, rc);
  auto samples = load_samples(rc, root, layout);
  auto report = evalkit::evaluate(model, samples, {rc.threshold, rc.out / "heatmaps"});
  auto f = open_out(rc.out / "metrics.csv");
  evalkit::write_metrics_csv(f, report);
  std::cout << "images " << report.per_image.size();
  if (report.i_auc) std::cout << " i_auc " << *report.i_auc;
  if (report.p_f1) std::cout << " p_f1 " << *report.p_f1;
  std::cout << '\n';
  return 0;
}

int cmd_stats(const Common& c) {
  RunConfig rc = load_config(c);
  auto samples = load_samples(rc, rc.data, rc.layout);
  std::vector<corpus::Sample> masked;
  for (auto& s : samples)
    if (s.label == 1 && s.mask) masked.push_back(std::move(s));
  if (masked.empty()) throw UsageError("no manipulated images with masks in " + rc.data.string());
  evalkit::RegionOptions ro;
  ro.band_radius = rc.band_radius;
  ro.variance_window = rc.variance_window;
  ro.canny = rc.train.edge.canny;
  auto stats = evalkit::region_stats(masked, ro);
  auto f = open_out(rc.out / "region_stats.csv");
  evalkit::write_region_stats_csv(f, stats);
  svg::region_bars(rc.out / "region_stats.svg", stats);
  std::cout << "region statistics over " << masked.size() << " images\n";
  return 0;
}

int cmd_sweep(const Common& c) {
  RunConfig rc = load_config(c);
  const fs::path root = rc.eval_data.empty() ? rc.data : rc.eval_data;
  const auto layout = rc.eval_data.empty() ? rc.layout : rc.eval_layout;
  auto enc = make_backbone(rc);
  pipeline::Model model = load_model(enc, rc);
  auto samples = load_samples(rc, root, layout);
  std::vector<corpus::PerturbationSpec> specs;
  for (auto k : rc.sweep_kinds)
    for (const auto& s : corpus::default_sweep(k, rc.train.seed)) specs.push_back(s);
  auto rows = evalkit::robustness_sweep(model, samples, specs, rc.threshold);
  auto f = open_out(rc.out / "robustness.csv");
  evalkit::write_robustness_csv(f, rows);
  for (auto k : rc.sweep_kinds) svg::sweep_lines(rc.out / ("robustness_" + corpus::to_string(k) + ".svg"), rows, k);
  std::cout << rows.size() << " sweep rows\n";
  return 0;
}

int cmd_edge(const std::string& image, const std::string& out, const Common& c) {
  RunConfig rc = load_config(c);
  softedge::SoftEdgeMap m = softedge::soft_edge_map(read_rgb(image), rc.train.edge);
  write_gray16_png(out, softedge::to_gray16(m));
  std::cout << "decay_k " << m.decay_k << " edge_density " << m.edge_density << (m.degenerate ? " degenerate" : "")
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised manipulation localization"};
  app.require_subcommand(1);
  Common train_c, eval_c, stats_c, sweep_c, edge_c;
  auto* train = app.add_subcommand("train", "train prompts, adapters and heads");
  add_common(train, train_c);
  auto* eval = app.add_subcommand("eval", "localize a dataset and write metrics.csv");
  add_common(eval, eval_c);
  auto* stats = app.add_subcommand("stats", "four-region edge statistics");
  add_common(stats, stats_c);
  auto* sweep = app.add_subcommand("sweep", "robustness sweep over perturbations");
  add_common(sweep, sweep_c);
  auto* edge = app.add_subcommand("edge", "write the soft edge map of one image as 16-bit PNG");
  std::string edge_in, edge_out;
  edge->add_option("image", edge_in, "input image")->required()->check(CLI::ExistingFile);
  edge->add_option("output", edge_out, "output PNG")->required();
  add_common(edge, edge_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*train) return cmd_train(train_c);
    if (*eval) return cmd_eval(eval_c);
    if (*stats) return cmd_stats(stats_c);
    if (*sweep) return cmd_sweep(sweep_c);
    if (*edge) return cmd_edge(edge_in, edge_out, edge_c);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n' << app.help();
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const corpus::DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
